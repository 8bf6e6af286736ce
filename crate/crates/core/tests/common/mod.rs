#![allow(dead_code)]
//! Brute-force oracles shared by the integration tests and the acceptance run.

use ionyield::beam::{BeamGeometry, DetectionVolume};
use ionyield::tofmap::{IonSpec, TofGeometry, TofVoltages};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Midpoint voxel count of {I >= I0/u} in the positive octant, times 8.
pub fn voxel_volume(beam: &BeamGeometry, u: f64, n: usize) -> f64 {
    let zm = beam.rayleigh_range * (u - 1.0).sqrt();
    // widest cross-section sits where 1 + ζ² = u/e (or at the waist for small u)
    let g = (u / std::f64::consts::E).max(1.0);
    let rm = beam.waist_w0 * (0.5 * g * (u / g).ln()).sqrt() * 1.001;
    let (hx, hz) = (rm / n as f64, zm / n as f64);
    let inside: u64 = (0..n)
        .into_par_iter()
        .map(|k| {
            let z = (k as f64 + 0.5) * hz;
            let mut c = 0u64;
            for i in 0..n {
                let x = (i as f64 + 0.5) * hx;
                for j in 0..n {
                    let y = (j as f64 + 0.5) * hx;
                    if beam.relative_intensity(x, y, z) * u >= 1.0 {
                        c += 1;
                    }
                }
            }
            c
        })
        .sum();
    8.0 * inside as f64 * hx * hx * hz
}

pub fn mc_rstd(volume: &DetectionVolume, beam: &BeamGeometry, samples: usize, seed: u64) -> f64 {
    let (cx, cy, cz) = volume.center(beam);
    let chunks = 16;
    let per = samples / chunks;
    let (s1, s2) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..per {
                let x = cx + volume.dx * (rng.random::<f64>() - 0.5);
                let y = cy + volume.dy * (rng.random::<f64>() - 0.5);
                let z = cz + volume.dz * (rng.random::<f64>() - 0.5);
                let v = beam.relative_intensity(x, y, z);
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = (per * chunks) as f64;
    let m = s1 / n;
    (s2 / n - m * m).sqrt() / m
}

pub struct Numeric {
    pub total: f64,
    /// Speeds at each region boundary crossing, in flight order, ending at the detector.
    pub speeds: Vec<f64>,
}

/// Velocity Verlet along the unfolded axis with event location at the grids:
/// a step that would leave the current region is cut at the crossing. Ends
/// when the ion is back at G1, then adds the field-free return leg.
pub fn verlet(x0: f64, ion: &IonSpec, g: &TofGeometry, v: &TofVoltages, dt: f64) -> Numeric {
    let e = [
        0.0,
        g.extraction_gap,
        g.extraction_gap + g.drift_length_1,
        g.extraction_gap + g.drift_length_1 + g.mirror_stage_1,
        g.extraction_gap + g.drift_length_1 + g.mirror_stage_1 + g.mirror_stage_2,
    ];
    let pot = [v.v_repeller, v.v_slit, v.v_g1, v.v_g2, v.v_g3];
    let accel = |r: usize| ion.acceleration((pot[r] - pot[r + 1]) / (e[r + 1] - e[r]));
    // first positive root of a/2·τ² + vel·τ = d
    let hit = |a: f64, vel: f64, d: f64| {
        let q = (vel * vel + 2.0 * a * d).max(0.0).sqrt();
        if d > 0.0 { 2.0 * d / (vel + q) } else { 2.0 * d / (vel - q) }
    };
    let (mut u, mut vel, mut t, mut r) = (x0, 0.0f64, 0.0f64, 0usize);
    let mut speeds = Vec::new();
    loop {
        let mut left = dt;
        while left > 0.0 {
            let a = accel(r);
            let un = u + vel * left + 0.5 * a * left * left;
            let (edge, next) = if un > e[r + 1] {
                assert!(r < 3, "ion left the mirror");
                (e[r + 1], r + 1)
            } else if un < e[r] && r > 0 {
                (e[r], r - 1)
            } else {
                // the velocity half-kicks collapse to vel + a·dt inside one region
                let an = accel(r);
                vel += 0.5 * (a + an) * left;
                u = un;
                t += left;
                break;
            };
            let tau = hit(a, vel, edge - u).min(left);
            vel += a * tau;
            u = edge;
            t += tau;
            left -= tau;
            speeds.push(vel.abs());
            if next == 1 && vel < 0.0 {
                speeds.push(vel.abs());
                return Numeric { total: t + g.drift_length_2 / vel.abs(), speeds };
            }
            r = next;
        }
    }
}
