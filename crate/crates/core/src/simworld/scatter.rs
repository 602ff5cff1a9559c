use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use super::world::{ObjectStatus, SimObject};
use super::SimError;

/// Rejection-sampling attempts allowed per object before giving up.
pub const ATTEMPTS_PER_OBJECT: usize = 10_000;

/// Place `n` objects uniformly on the workspace, keeping every pair of
/// centres at least `min_separation` apart and clear of the target box.
/// Centres are inset by the largest radius so discs never overhang the
/// workspace edge. Pure function of `(config, seed, n, min_separation)`.
pub fn scatter_objects(
    config: &SimConfig,
    seed: u64,
    n: usize,
    min_separation: f64,
) -> Result<Vec<SimObject>, SimError> {
    let o = &config.objects;
    let inset = 0.5 * o.diameter_max;
    let area = config.workspace.inflate(-inset);
    let keep_out = config.box_region.inflate(0.5 * o.diameter_max);
    if area.width() <= 0.0 || area.height() <= 0.0 {
        return Err(SimError::PlacementInfeasible { placed: 0, requested: n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objects: Vec<SimObject> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    let budget = ATTEMPTS_PER_OBJECT * n.max(1);
    while objects.len() < n {
        if attempts >= budget {
            return Err(SimError::PlacementInfeasible {
                placed: objects.len(),
                requested: n,
            });
        }
        attempts += 1;
        let x = rng.gen_range(area.x_min..=area.x_max);
        let y = rng.gen_range(area.y_min..=area.y_max);
        if keep_out.contains(x, y) {
            continue;
        }
        let clear = objects
            .iter()
            .all(|p| (p.center[0] - x).hypot(p.center[1] - y) >= min_separation);
        if !clear {
            continue;
        }
        let diameter = if o.diameter_max > o.diameter_min {
            rng.gen_range(o.diameter_min..=o.diameter_max)
        } else {
            o.diameter_min
        };
        objects.push(SimObject {
            id: objects.len() as u32,
            center: [x, y, 0.5 * diameter],
            diameter,
            status: ObjectStatus::Free,
        });
    }
    Ok(objects)
}
