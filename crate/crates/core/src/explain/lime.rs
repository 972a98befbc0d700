use super::{
    argmax, check_obs, eval_masks, ContributionMap, ExplainError, Method, PerturbationScheme, ProbabilityModel,
};
use nalgebra::DMatrix;
use rand::Rng;

/// Local linear surrogate from group-presence bits to each action probability.
///
/// The first sample is the unperturbed observation; each further sample switches off
/// a uniformly drawn number of groups chosen uniformly without replacement.
pub fn lime_explain<M: ProbabilityModel + ?Sized, R: Rng + ?Sized>(
    model: &M,
    obs: &[f32],
    scheme: &PerturbationScheme,
    rng: &mut R,
) -> Result<ContributionMap, ExplainError> {
    check_obs(scheme, obs)?;
    let g = scheme.n_groups();
    let n = scheme.n_samples;
    let mut masks = Vec::with_capacity(n);
    masks.push(vec![true; g]);
    while masks.len() < n {
        let k = rng.random_range(1..=g);
        let mut m = vec![true; g];
        for i in rand::seq::index::sample(rng, g, k) {
            m[i] = false;
        }
        masks.push(m);
    }
    let ys = eval_masks(model, scheme, obs, &masks)?;
    let p = model.n_outputs();
    let width = scheme.kernel_width();
    let weights: Vec<f64> = masks
        .iter()
        .map(|m| {
            let off = m.iter().filter(|b| !**b).count() as f64;
            (-off / (width * width)).exp().sqrt()
        })
        .collect();
    let cols = g + 1;
    let mut a = DMatrix::<f64>::zeros(n, cols);
    let mut b = DMatrix::<f64>::zeros(n, p);
    for (i, m) in masks.iter().enumerate() {
        let sw = weights[i].sqrt();
        a[(i, 0)] = sw;
        for (j, &bit) in m.iter().enumerate() {
            if bit {
                a[(i, j + 1)] = sw;
            }
        }
        for k in 0..p {
            b[(i, k)] = sw * ys[i][k];
        }
    }
    let qr = a.qr();
    let r = qr.r();
    let diag_max = r.diagonal().amax();
    let tol = diag_max * 1e-10;
    let rank = r.diagonal().iter().filter(|d| d.abs() > tol).count();
    if rank < cols {
        return Err(ExplainError::RankDeficient { rank, needed: cols });
    }
    let beta = r
        .solve_upper_triangular(&(qr.q().transpose() * b))
        .ok_or(ExplainError::RankDeficient { rank, needed: cols })?;
    let wsum: f64 = weights.iter().sum();
    let mut group_values = Vec::with_capacity(p);
    let mut fidelity = Vec::with_capacity(p);
    for k in 0..p {
        group_values.push((0..g).map(|j| beta[(j + 1, k)]).collect::<Vec<f64>>());
        let mean = masks
            .iter()
            .enumerate()
            .map(|(i, _)| weights[i] * ys[i][k])
            .sum::<f64>()
            / wsum;
        let (mut ss_res, mut ss_tot) = (0.0, 0.0);
        for (i, m) in masks.iter().enumerate() {
            let fit = beta[(0, k)]
                + m.iter()
                    .enumerate()
                    .filter(|(_, b)| **b)
                    .map(|(j, _)| beta[(j + 1, k)])
                    .sum::<f64>();
            ss_res += weights[i] * (ys[i][k] - fit).powi(2);
            ss_tot += weights[i] * (ys[i][k] - mean).powi(2);
        }
        fidelity.push(if ss_tot > 1e-20 * wsum {
            1.0 - ss_res / ss_tot
        } else {
            1.0
        });
    }
    let selected = argmax(&ys[0]);
    Ok(ContributionMap::build(
        Method::Lime,
        scheme,
        group_values,
        fidelity,
        selected,
    ))
}
