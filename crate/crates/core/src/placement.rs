//! Best-fit host selection shared by the BFD baseline and by the default
//! placement of VMs a schedule leaves pending.

use crate::model::Resources;

/// Picks the feasible host left with the least spare capacity after adding
/// `demand`, i.e. the highest post-placement bottleneck utilisation.
///
/// Ties go to the lower `price` and then to the lower index. Returns `None`
/// when no host can take the demand.
pub fn best_fit(loads: &[Resources], capacities: &[Resources], demand: Resources, price: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (load, cap)) in loads.iter().zip(capacities).enumerate() {
        let after = *load + demand;
        if !after.fits_within(cap) {
            continue;
        }
        let util = after.ratio_of(cap);
        best = match best {
            None => Some((i, util)),
            Some((j, u)) => {
                let better = util > u || (util == u && price[i] < price[j]);
                if better {
                    Some((i, util))
                } else {
                    Some((j, u))
                }
            }
        };
    }
    best.map(|(i, _)| i)
}
