use super::{
    argmax, check_obs, eval_masks, ContributionMap, ExplainError, Method, PerturbationScheme, ProbabilityModel,
};
use rand::seq::SliceRandom;
use rand::Rng;

/// Permutation-sampling Shapley estimate per group.
///
/// Sample `i` targets group `i mod groups`: a random permutation fixes the groups revealed
/// before it, and the sample is the change in output when the group is revealed on top.
/// The efficiency residual `|Σφ − (f(obs) − f(masked))|` is stored as the map's fidelity.
pub fn shap_explain<M: ProbabilityModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    obs: &[f32],
    scheme: &PerturbationScheme,
    rng: &mut R,
) -> Result<ContributionMap, ExplainError> {
    check_obs(scheme, obs)?;
    let g = scheme.n_groups();
    let n = scheme.n_samples;
    let p = model.n_outputs();
    let mut masks = Vec::with_capacity(2 * n + 2);
    masks.push(vec![true; g]);
    masks.push(vec![false; g]);
    let mut order: Vec<usize> = (0..g).collect();
    for i in 0..n {
        let target = i % g;
        order.shuffle(rng);
        let mut without = vec![false; g];
        for &o in order.iter().take_while(|&&o| o != target) {
            without[o] = true;
        }
        let mut with = without.clone();
        with[target] = true;
        masks.push(without);
        masks.push(with);
    }
    let ys = eval_masks(model, scheme, obs, &masks)?;
    let mut sums = vec![vec![0.0; g]; p];
    let mut counts = vec![0usize; g];
    for i in 0..n {
        let target = i % g;
        counts[target] += 1;
        let (without, with) = (&ys[2 + 2 * i], &ys[3 + 2 * i]);
        for k in 0..p {
            sums[k][target] += with[k] - without[k];
        }
    }
    let group_values: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|s| {
            s.into_iter()
                .zip(&counts)
                .map(|(v, &c)| if c > 0 { v / c as f64 } else { 0.0 })
                .collect()
        })
        .collect();
    let fidelity = (0..p)
        .map(|k| (group_values[k].iter().sum::<f64>() - (ys[0][k] - ys[1][k])).abs())
        .collect();
    Ok(ContributionMap::build(
        Method::Shap,
        scheme,
        group_values,
        fidelity,
        argmax(&ys[0]),
    ))
}
