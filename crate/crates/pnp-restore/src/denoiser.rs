//! Pixel-wise denoising agent: every pixel picks an integer residual in
//! [-13, 13] per step, the image transitions for T steps, and rewards measure
//! the per-step squared-error improvement against the clean target.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::ImageGray;
use crate::nn::{PolicyValueNet, NUM_ACTIONS};

/// Per-pixel action indices in 0..=26; index i encodes residual i - 13.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMap {
    indices: Array2<u8>,
}

impl ActionMap {
    pub fn new(indices: Array2<u8>) -> Result<Self> {
        if indices.iter().any(|&i| i as usize >= NUM_ACTIONS) {
            return Err(Error::InvalidArgument(
                "action index out of range 0..=26".into(),
            ));
        }
        Ok(ActionMap { indices })
    }

    pub fn indices(&self) -> &Array2<u8> {
        &self.indices
    }

    pub fn residual(index: u8) -> f64 {
        index as f64 - 13.0
    }

    /// Per-pixel argmax of a (27, H, W) probability map; ties break low.
    pub fn greedy(policy: &Array3<f64>) -> ActionMap {
        let (a, h, w) = policy.dim();
        let indices = Array2::from_shape_fn((h, w), |(i, j)| {
            let mut best = 0usize;
            let mut best_p = policy[(0, i, j)];
            for k in 1..a {
                if policy[(k, i, j)] > best_p {
                    best_p = policy[(k, i, j)];
                    best = k;
                }
            }
            best as u8
        });
        ActionMap { indices }
    }

    /// Sample each pixel from its categorical distribution.
    pub fn sample<R: Rng>(policy: &Array3<f64>, rng: &mut R) -> ActionMap {
        let (a, h, w) = policy.dim();
        let indices = Array2::from_shape_fn((h, w), |(i, j)| {
            let u: f64 = rng.gen::<f64>();
            let mut acc = 0.0;
            for k in 0..a {
                acc += policy[(k, i, j)];
                if u < acc {
                    return k as u8;
                }
            }
            (a - 1) as u8
        });
        ActionMap { indices }
    }
}

/// Episode length and discount.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeConfig {
    pub steps: usize,
    pub gamma: f64,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            steps: 5,
            gamma: 0.95,
        }
    }
}

impl EpisodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidArgument("episode steps must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be in (0, 1], got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// One sampled episode: states, per-pixel actions, probabilities of the taken
/// actions, value estimates, and (when a clean target was supplied) rewards.
pub struct TrajectoryBatch {
    pub states: Vec<ImageGray>,
    pub actions: Vec<ActionMap>,
    pub old_probs: Vec<Array2<f64>>,
    pub values: Vec<Array2<f64>>,
    pub rewards: Option<Vec<Array2<f64>>>,
}

impl TrajectoryBatch {
    /// Rewards are only defined when a clean target exists; training requires them.
    pub fn rewards_for_training(&self) -> Result<&[Array2<f64>]> {
        self.rewards
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument("trajectory collected without a clean target".into()))
    }
}

/// Apply an action map: I' = clip(I + residual(a), 0, 255).
pub fn transition(image: &ImageGray, actions: &ActionMap) -> Result<ImageGray> {
    if (image.height(), image.width()) != actions.indices.dim() {
        return Err(Error::shape(
            format!("{}x{}", image.height(), image.width()),
            format!("{:?}", actions.indices.dim()),
        ));
    }
    let data = ndarray::Zip::from(image.data())
        .and(&actions.indices)
        .map_collect(|&v, &a| (v + ActionMap::residual(a)).clamp(0.0, 255.0));
    ImageGray::new(data)
}

/// Step-wise improvement reward: (x - I_prev)^2 - (x - I_cur)^2 per pixel.
pub fn reward_map(
    clean: &ImageGray,
    previous: &ImageGray,
    current: &ImageGray,
) -> Result<Array2<f64>> {
    let dims = clean.data().dim();
    if previous.data().dim() != dims || current.data().dim() != dims {
        return Err(Error::shape(
            format!("{dims:?}"),
            format!(
                "{:?} / {:?}",
                previous.data().dim(),
                current.data().dim()
            ),
        ));
    }
    Ok(ndarray::Zip::from(clean.data())
        .and(previous.data())
        .and(current.data())
        .map_collect(|&x, &p, &c| (x - p).powi(2) - (x - c).powi(2)))
}

/// Discounted rewards-to-go by backward recursion R[t] = r[t] + gamma * R[t+1].
pub fn rewards_to_go(rewards: &[Array2<f64>], gamma: f64) -> Vec<Array2<f64>> {
    let mut out: Vec<Array2<f64>> = Vec::with_capacity(rewards.len());
    let mut next: Option<Array2<f64>> = None;
    for r in rewards.iter().rev() {
        let cur = match &next {
            Some(n) => r + &(gamma * n),
            None => r.clone(),
        };
        next = Some(cur.clone());
        out.push(cur);
    }
    out.reverse();
    out
}

/// Deterministic inference: per-pixel argmax actions for T steps.
pub fn denoise_greedy(
    net: &PolicyValueNet,
    input: &ImageGray,
    cfg: &EpisodeConfig,
) -> Result<ImageGray> {
    cfg.validate()?;
    let mut state = input.clone();
    for _ in 0..cfg.steps {
        let out = net.forward(&state, false)?;
        let actions = ActionMap::greedy(&out.policy);
        state = transition(&state, &actions)?;
    }
    Ok(state)
}

/// Stochastic rollout used during training. When `clean` is given, per-step
/// rewards are recorded alongside states, actions, probabilities and values.
pub fn denoise_sampled(
    net: &PolicyValueNet,
    input: &ImageGray,
    cfg: &EpisodeConfig,
    seed: u64,
    clean: Option<&ImageGray>,
) -> Result<TrajectoryBatch> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut states = vec![input.clone()];
    let mut actions = Vec::with_capacity(cfg.steps);
    let mut old_probs = Vec::with_capacity(cfg.steps);
    let mut values = Vec::with_capacity(cfg.steps);
    let mut rewards = clean.map(|_| Vec::with_capacity(cfg.steps));

    for _ in 0..cfg.steps {
        let state = states.last().unwrap();
        let out = net.forward(state, false)?;
        let act = ActionMap::sample(&out.policy, &mut rng);
        let taken_prob = Array2::from_shape_fn(act.indices.dim(), |(i, j)| {
            out.policy[(act.indices[(i, j)] as usize, i, j)]
        });
        let next = transition(state, &act)?;
        if let (Some(rs), Some(x)) = (rewards.as_mut(), clean) {
            rs.push(reward_map(x, state, &next)?);
        }
        actions.push(act);
        old_probs.push(taken_prob);
        values.push(out.value);
        states.push(next);
    }
    Ok(TrajectoryBatch {
        states,
        actions,
        old_probs,
        values,
        rewards,
    })
}

/// Strength-adapted prior step: blend the greedy denoiser output toward the
/// input when the requested noise level falls below the training level.
/// alpha = min(1, sigma / sigma_train).
pub fn denoiser_as_prior(
    net: &PolicyValueNet,
    x: &ImageGray,
    sigma: f64,
    sigma_train: f64,
    cfg: &EpisodeConfig,
) -> Result<ImageGray> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "denoiser sigma must be > 0, got {sigma}"
        )));
    }
    let denoised = denoise_greedy(net, x, cfg)?;
    let alpha = (sigma / sigma_train).min(1.0);
    if alpha >= 1.0 {
        return Ok(denoised);
    }
    let data = ndarray::Zip::from(x.data())
        .and(denoised.data())
        .map_collect(|&xv, &dv| xv + alpha * (dv - xv));
    ImageGray::new(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetConfig;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageGray {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageGray::new(Array2::from_shape_fn((h, w), |_| rng.gen_range(0.0..255.0))).unwrap()
    }

    #[test]
    fn zero_residual_action_is_identity() {
        let img = random_image(5, 5, 0);
        let act = ActionMap::new(Array2::from_elem((5, 5), 13)).unwrap();
        assert_eq!(transition(&img, &act).unwrap(), img);
    }

    #[test]
    fn transition_clips_and_shifts() {
        let img = ImageGray::constant(2, 2, 250.0).unwrap();
        let act = ActionMap::new(Array2::from_elem((2, 2), 26)).unwrap(); // +13
        let out = transition(&img, &act).unwrap();
        assert_eq!(out.data()[(0, 0)], 255.0);

        let img = ImageGray::constant(1, 1, 100.0).unwrap();
        let act = ActionMap::new(Array2::from_elem((1, 1), 0)).unwrap(); // -13
        assert_eq!(transition(&img, &act).unwrap().data()[(0, 0)], 87.0);
    }

    #[test]
    fn reward_direct_substitution() {
        let x = ImageGray::constant(1, 1, 100.0).unwrap();
        let prev = ImageGray::constant(1, 1, 110.0).unwrap();
        let cur = ImageGray::constant(1, 1, 105.0).unwrap();
        let r = reward_map(&x, &prev, &cur).unwrap();
        assert_abs_diff_eq!(r[(0, 0)], 75.0, epsilon = 1e-12);
    }

    #[test]
    fn reward_perfect_correction_and_noop() {
        let x = random_image(4, 4, 1);
        let prev = random_image(4, 4, 2);
        let r = reward_map(&x, &prev, &x).unwrap();
        for ((i, j), v) in r.indexed_iter() {
            let d = x.data()[(i, j)] - prev.data()[(i, j)];
            assert_abs_diff_eq!(*v, d * d, epsilon = 1e-9);
        }
        let r0 = reward_map(&x, &prev, &prev).unwrap();
        assert!(r0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn rewards_to_go_scalar_example() {
        let rewards: Vec<Array2<f64>> = [1.0, 2.0, 3.0]
            .iter()
            .map(|&v| Array2::from_elem((1, 1), v))
            .collect();
        let rtg = rewards_to_go(&rewards, 0.5);
        assert_abs_diff_eq!(rtg[0][(0, 0)], 2.75, epsilon = 1e-12);
        assert_abs_diff_eq!(rtg[1][(0, 0)], 3.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rtg[2][(0, 0)], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn rewards_to_go_gamma_zero_is_myopic() {
        let rewards: Vec<Array2<f64>> = (0..3)
            .map(|s| Array2::from_shape_fn((2, 2), |(i, j)| (s * 4 + i * 2 + j) as f64))
            .collect();
        let rtg = rewards_to_go(&rewards, 0.0);
        for (a, b) in rtg.iter().zip(rewards.iter()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn telescoping_identity_with_unit_gamma() {
        let net = PolicyValueNet::new(NetConfig::small(6, 2), 5).unwrap();
        let clean = random_image(8, 8, 6);
        let noisy = crate::image::add_gaussian_noise(&clean, 25.0, 7)
            .unwrap()
            .clipped();
        let cfg = EpisodeConfig {
            steps: 4,
            gamma: 1.0,
        };
        let traj = denoise_sampled(&net, &noisy, &cfg, 8, Some(&clean)).unwrap();
        let rewards = traj.rewards_for_training().unwrap();
        let mut total = Array2::<f64>::zeros((8, 8));
        for r in rewards {
            total += r;
        }
        let first = traj.states.first().unwrap();
        let last = traj.states.last().unwrap();
        for ((i, j), v) in total.indexed_iter() {
            let expected = (clean.data()[(i, j)] - first.data()[(i, j)]).powi(2)
                - (clean.data()[(i, j)] - last.data()[(i, j)]).powi(2);
            assert!((v - expected).abs() < 1e-9);
        }
    }

    #[test]
    fn states_stay_in_range_and_chain_exactly() {
        let net = PolicyValueNet::new(NetConfig::small(6, 2), 9).unwrap();
        let noisy = crate::image::add_gaussian_noise(&random_image(6, 6, 10), 25.0, 11).unwrap();
        let cfg = EpisodeConfig::default();
        let traj = denoise_sampled(&net, &noisy, &cfg, 12, None).unwrap();
        assert_eq!(traj.states.len(), cfg.steps + 1);
        assert!(traj.rewards.is_none());
        assert!(traj.rewards_for_training().is_err());
        for (t, window) in traj.states.windows(2).enumerate() {
            let next = transition(&window[0], &traj.actions[t]).unwrap();
            assert_eq!(next, window[1]);
        }
        // I^0 itself is not clipped, every later state is
        for s in &traj.states[1..] {
            assert!(s.data().iter().all(|v| (0.0..=255.0).contains(v)));
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let net = PolicyValueNet::new(NetConfig::small(6, 2), 13).unwrap();
        let noisy = random_image(6, 6, 14);
        let cfg = EpisodeConfig::default();
        let a = denoise_sampled(&net, &noisy, &cfg, 15, None).unwrap();
        let b = denoise_sampled(&net, &noisy, &cfg, 15, None).unwrap();
        for (x, y) in a.states.iter().zip(b.states.iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn uniform_policy_samples_actions_uniformly() {
        // zero-initialized final policy layer -> exactly uniform policy
        let net = PolicyValueNet::new(NetConfig::small(4, 1), 16).unwrap();
        let img = random_image(64, 64, 17);
        let cfg = EpisodeConfig {
            steps: 5,
            gamma: 0.95,
        };
        let mut counts = vec![0usize; NUM_ACTIONS];
        let mut total = 0usize;
        for seed in 0..50u64 {
            let traj = denoise_sampled(&net, &img, &cfg, seed, None).unwrap();
            for act in &traj.actions {
                for &a in act.indices().iter() {
                    counts[a as usize] += 1;
                    total += 1;
                }
            }
        }
        assert!(total >= 1_000_000);
        let expected = total as f64 / NUM_ACTIONS as f64;
        for (a, &c) in counts.iter().enumerate() {
            let rel = (c as f64 - expected).abs() / expected;
            assert!(rel < 0.01, "action {a}: freq {c} vs expected {expected}");
        }
    }

    #[test]
    fn trajectory_probability_is_product_of_step_probabilities() {
        let net = PolicyValueNet::new(NetConfig::small(6, 2), 18).unwrap();
        let img = random_image(4, 4, 19);
        let traj = denoise_sampled(&net, &img, &EpisodeConfig::default(), 20, None).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let product: f64 = traj.old_probs.iter().map(|p| p[(i, j)]).product();
                let log_sum: f64 = traj.old_probs.iter().map(|p| p[(i, j)].ln()).sum();
                assert!((product - log_sum.exp()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn greedy_is_deterministic_and_matches_onehot_sampling() {
        let net = PolicyValueNet::new(NetConfig::small(6, 2), 21).unwrap();
        let noisy = random_image(6, 6, 23);
        let cfg = EpisodeConfig::default();
        let g1 = denoise_greedy(&net, &noisy, &cfg).unwrap();
        let g2 = denoise_greedy(&net, &noisy, &cfg).unwrap();
        assert_eq!(g1, g2);

        // on an explicit near-one-hot distribution, sampling must pick the
        // same action the argmax picks at every pixel
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let (h, w) = (6usize, 6usize);
        let hot = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..NUM_ACTIONS));
        let eps = 1e-12;
        let policy = ndarray::Array3::from_shape_fn((NUM_ACTIONS, h, w), |(a, i, j)| {
            if a == hot[(i, j)] {
                1.0 - (NUM_ACTIONS - 1) as f64 * eps
            } else {
                eps
            }
        });
        let greedy = ActionMap::greedy(&policy);
        let sampled = ActionMap::sample(&policy, &mut rng);
        assert_eq!(greedy.indices(), sampled.indices());
        for (idx, &a) in greedy.indices().indexed_iter() {
            assert_eq!(a as usize, hot[idx]);
        }
    }

    #[test]
    fn identity_policy_returns_input() {
        let mut net = PolicyValueNet::new(NetConfig::small(4, 1), 25).unwrap();
        // force the zero-residual logit high everywhere
        let n_layers = net.layers().count();
        let final_policy = net.layers_mut().nth(n_layers - 3).unwrap();
        final_policy.bias[13] = 100.0;
        let img = random_image(5, 5, 26);
        let out = denoise_greedy(&net, &img, &EpisodeConfig::default()).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn prior_blend_interpolates_with_sigma() {
        let net = PolicyValueNet::new(NetConfig::small(6, 2), 27).unwrap();
        let x = random_image(6, 6, 28);
        let cfg = EpisodeConfig::default();
        let full = denoiser_as_prior(&net, &x, 30.0, 25.0, &cfg).unwrap();
        let greedy = denoise_greedy(&net, &x, &cfg).unwrap();
        assert_eq!(full, greedy);

        let half = denoiser_as_prior(&net, &x, 12.5, 25.0, &cfg).unwrap();
        for ((a, b), c) in x
            .data()
            .iter()
            .zip(greedy.data().iter())
            .zip(half.data().iter())
        {
            assert_abs_diff_eq!(*c, 0.5 * (a + b), epsilon = 1e-12);
        }

        let weak = denoiser_as_prior(&net, &x, 1e-9, 25.0, &cfg).unwrap();
        for (a, b) in x.data().iter().zip(weak.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn second_greedy_pass_moves_at_most_action_range() {
        let net = PolicyValueNet::new(NetConfig::small(6, 2), 29).unwrap();
        let noisy = random_image(8, 8, 30).clipped();
        let cfg = EpisodeConfig::default();
        let once = denoise_greedy(&net, &noisy, &cfg).unwrap();
        let twice = denoise_greedy(&net, &once, &cfg).unwrap();
        let bound = 13.0 * cfg.steps as f64;
        for (a, b) in once.data().iter().zip(twice.data().iter()) {
            assert!((a - b).abs() <= bound);
        }
    }
}
