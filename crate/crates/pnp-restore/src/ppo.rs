//! Clipped proximal policy optimization with an entropy bonus and value
//! regression, specialized to the pixel-wise denoising agent.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::denoiser::{denoise_greedy, denoise_sampled, rewards_to_go, EpisodeConfig, TrajectoryBatch};
use crate::error::{Error, Result};
use crate::image::{add_gaussian_noise, augment_dihedral, psnr, random_patch, ImageGray, PatchSpec};
use crate::nn::{Adam, GradientTape, PolicyValueNet, NUM_ACTIONS};

#[derive(Debug, Clone)]
pub struct PPOConfig {
    pub clip_epsilon: f64,
    pub entropy_coeff: f64,
    pub gamma: f64,
    pub epochs_per_batch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub total_epochs: usize,
    pub sigma_train: f64,
    pub value_loss_weight: f64,
}

impl Default for PPOConfig {
    fn default() -> Self {
        PPOConfig {
            clip_epsilon: 0.2,
            entropy_coeff: 0.01,
            gamma: 0.95,
            epochs_per_batch: 4,
            batch_size: 32,
            learning_rate: 1e-4,
            total_epochs: 600,
            sigma_train: 25.0,
            value_loss_weight: 1.0,
        }
    }
}

impl PPOConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "clip epsilon must be in (0, 1), got {}",
                self.clip_epsilon
            )));
        }
        if self.entropy_coeff < 0.0 {
            return Err(Error::InvalidArgument("entropy coefficient must be >= 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument("gamma must be in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.epochs_per_batch == 0 || self.total_epochs == 0 {
            return Err(Error::InvalidArgument(
                "batch size, update passes and epochs must be >= 1".into(),
            ));
        }
        if !(self.sigma_train > 0.0) {
            return Err(Error::InvalidArgument("training sigma must be > 0".into()));
        }
        Ok(())
    }
}

/// Advantage estimates: plain elementwise R_hat - V, no normalization.
pub fn advantage(r_hat: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    if r_hat.dim() != v.dim() {
        return Err(Error::shape(
            format!("{:?}", r_hat.dim()),
            format!("{:?}", v.dim()),
        ));
    }
    Ok(r_hat - v)
}

/// Clipped surrogate: min(r * A, clip(r, 1-eps, 1+eps) * A) with r = new/old.
pub fn ppo_clip_objective(new_prob: f64, old_prob: f64, a_hat: f64, epsilon: f64) -> Result<f64> {
    if !(old_prob > 0.0) {
        return Err(Error::Numerical(format!(
            "ratio undefined: old probability {old_prob}"
        )));
    }
    let r = new_prob / old_prob;
    let clipped = r.clamp(1.0 - epsilon, 1.0 + epsilon);
    Ok((r * a_hat).min(clipped * a_hat))
}

/// Whether the surrogate gradient flows through the ratio at this point.
/// It is cut exactly when the clip is active on the pessimistic side.
fn clip_gradient_active(ratio: f64, a_hat: f64, epsilon: f64) -> bool {
    !((a_hat > 0.0 && ratio > 1.0 + epsilon) || (a_hat < 0.0 && ratio < 1.0 - epsilon))
}

/// Per-pixel policy entropy in nats, with the 0 * ln 0 = 0 convention.
pub fn policy_entropy(policy: &Array3<f64>) -> Array2<f64> {
    let (a, h, w) = policy.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let mut s = 0.0;
        for k in 0..a {
            let p = policy[(k, i, j)];
            if p > 0.0 {
                s -= p * p.ln();
            }
        }
        s
    })
}

/// Mean squared error between value predictions and returns.
pub fn value_loss(v_pred: &Array2<f64>, r_hat: &Array2<f64>) -> Result<f64> {
    if v_pred.dim() != r_hat.dim() {
        return Err(Error::shape(
            format!("{:?}", v_pred.dim()),
            format!("{:?}", r_hat.dim()),
        ));
    }
    let n = v_pred.len() as f64;
    Ok(v_pred
        .iter()
        .zip(r_hat.iter())
        .map(|(v, r)| (v - r) * (v - r))
        .sum::<f64>()
        / n)
}

/// One epoch's logged quantities.
#[derive(Debug, Clone)]
pub struct TrainMetrics {
    pub epoch: usize,
    pub mean_reward: f64,
    pub entropy: f64,
    pub value_loss: f64,
    pub holdout_psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub patch_size: usize,
    pub seed: u64,
}

struct CollectedEpisode {
    traj: TrajectoryBatch,
    returns: Vec<Array2<f64>>,
    advantages: Vec<Array2<f64>>,
    mean_reward: f64,
}

/// Algorithm: per epoch, sample a batch of augmented noisy patches, roll out
/// the current policy, compute rewards-to-go and advantages, then take
/// `epochs_per_batch` passes of clipped-surrogate + entropy + value updates.
///
/// `on_epoch` is called after each epoch with the metrics and the current
/// network (for checkpointing).
pub fn train<F>(
    images: &[ImageGray],
    holdout: &[ImageGray],
    net: &mut PolicyValueNet,
    cfg: &PPOConfig,
    episode: &EpisodeConfig,
    opts: &TrainOptions,
    mut on_epoch: F,
) -> Result<Vec<TrainMetrics>>
where
    F: FnMut(&TrainMetrics, &PolicyValueNet) -> Result<()>,
{
    cfg.validate()?;
    episode.validate()?;
    if images.is_empty() {
        return Err(Error::Dataset("training set is empty".into()));
    }
    for img in images {
        if img.height() < opts.patch_size || img.width() < opts.patch_size {
            return Err(Error::Dataset(format!(
                "training image {}x{} smaller than patch size {}",
                img.height(),
                img.width(),
                opts.patch_size
            )));
        }
    }
    // fixed noisy versions of the holdout images, shared across epochs
    let holdout_pairs: Vec<(ImageGray, ImageGray)> = holdout
        .iter()
        .enumerate()
        .map(|(i, clean)| {
            let noisy = add_gaussian_noise(clean, cfg.sigma_train, opts.seed ^ (0x9e37 + i as u64))?;
            Ok((clean.clone(), noisy))
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut optimizer = Adam::new(net, cfg.learning_rate)?;
    let mut metrics_log = Vec::with_capacity(cfg.total_epochs);

    for epoch in 0..cfg.total_epochs {
        // ---- collection phase (frozen parameters) ----
        let mut episodes = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            let img = &images[rng.gen_range(0..images.len())];
            let patch = random_patch(
                img,
                &PatchSpec {
                    size: opts.patch_size,
                    seed: rng.gen(),
                },
            )?;
            let clean = augment_dihedral(&patch, rng.gen_range(0..8))?;
            let noisy = add_gaussian_noise(&clean, cfg.sigma_train, rng.gen())?;
            let traj = denoise_sampled(net, &noisy, episode, rng.gen(), Some(&clean))?;
            let rewards = traj.rewards_for_training()?;
            let returns = rewards_to_go(rewards, cfg.gamma);
            let advantages: Vec<Array2<f64>> = returns
                .iter()
                .zip(traj.values.iter())
                .map(|(r, v)| advantage(r, v))
                .collect::<Result<_>>()?;
            let mean_reward = rewards.iter().map(|r| r.mean().unwrap_or(0.0)).sum::<f64>()
                / rewards.len() as f64;
            episodes.push(CollectedEpisode {
                traj,
                returns,
                advantages,
                mean_reward,
            });
        }

        // ---- update phase ----
        let mut entropy_acc = 0.0;
        let mut value_loss_acc = 0.0;
        let mut first_pass_samples = 0usize;
        for pass in 0..cfg.epochs_per_batch {
            for ep in &episodes {
                let (tape, ep_entropy, ep_value_loss) = episode_gradient(net, ep, cfg)?;
                if pass == 0 {
                    entropy_acc += ep_entropy;
                    value_loss_acc += ep_value_loss;
                    first_pass_samples += 1;
                }
                optimizer.step(net, &tape)?;
            }
        }
        let mean_entropy = entropy_acc / first_pass_samples as f64;
        let mean_value_loss = value_loss_acc / first_pass_samples as f64;
        if !mean_value_loss.is_finite() || !mean_entropy.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at epoch {epoch}"
            )));
        }
        // entropy collapse this early means the policy went deterministic
        if mean_entropy < 0.01 && epoch < cfg.total_epochs / 4 {
            return Err(Error::Numerical(format!(
                "policy entropy collapsed to {mean_entropy:.4} nats at epoch {epoch}"
            )));
        }

        let mean_reward =
            episodes.iter().map(|e| e.mean_reward).sum::<f64>() / episodes.len() as f64;

        let holdout_psnr = if holdout_pairs.is_empty() {
            f64::NAN
        } else {
            let mut acc = 0.0;
            for (clean, noisy) in &holdout_pairs {
                let denoised = denoise_greedy(net, noisy, episode)?;
                acc += psnr(clean, &denoised)?;
            }
            acc / holdout_pairs.len() as f64
        };

        let m = TrainMetrics {
            epoch,
            mean_reward,
            entropy: mean_entropy,
            value_loss: mean_value_loss,
            holdout_psnr,
        };
        on_epoch(&m, net)?;
        metrics_log.push(m);
    }
    Ok(metrics_log)
}

/// Gradient of the joint loss over one trajectory (all T stored states):
/// descent direction for -(mean clipped surrogate + eta * entropy)
/// + value_weight * value MSE. Also returns the trajectory's mean entropy
/// and value loss under the current parameters.
fn episode_gradient(
    net: &PolicyValueNet,
    ep: &CollectedEpisode,
    cfg: &PPOConfig,
) -> Result<(GradientTape, f64, f64)> {
    let steps = ep.traj.actions.len();
    let (h, w) = ep.traj.states[0].data().dim();
    let norm = 1.0 / (steps * h * w) as f64;

    let mut tape = GradientTape::zeros_like(net);
    let mut entropy_sum = 0.0;
    let mut value_loss_sum = 0.0;

    for t in 0..steps {
        let out = net.forward(&ep.traj.states[t], true)?;
        let cache = out.cache.as_ref().expect("training forward keeps cache");
        let actions = &ep.traj.actions[t];
        let old_probs = &ep.traj.old_probs[t];
        let adv = &ep.advantages[t];

        // gradient of the maximization objective w.r.t. probabilities,
        // negated for descent
        let mut policy_grad = Array3::zeros((NUM_ACTIONS, h, w));
        for i in 0..h {
            for j in 0..w {
                let a = actions.indices()[(i, j)] as usize;
                let old_p = old_probs[(i, j)];
                if !(old_p > 0.0) {
                    return Err(Error::Numerical(
                        "stored action probability is zero; ratio undefined".into(),
                    ));
                }
                let new_p = out.policy[(a, i, j)];
                let ratio = new_p / old_p;
                let a_hat = adv[(i, j)];
                if clip_gradient_active(ratio, a_hat, cfg.clip_epsilon) {
                    policy_grad[(a, i, j)] -= norm * a_hat / old_p;
                }
                if cfg.entropy_coeff > 0.0 {
                    for k in 0..NUM_ACTIONS {
                        let p = out.policy[(k, i, j)];
                        if p > 0.0 {
                            // d(-eta*H)/dp_k = eta * (ln p + 1)
                            policy_grad[(k, i, j)] += norm * cfg.entropy_coeff * (p.ln() + 1.0);
                        }
                    }
                }
            }
        }

        let r_hat = &ep.returns[t];
        let value_grad = ndarray::Zip::from(&out.value)
            .and(r_hat)
            .map_collect(|&v, &r| cfg.value_loss_weight * 2.0 * (v - r) * norm);

        let step_tape = net.backward(cache, &policy_grad, &value_grad)?;
        tape.add_assign(&step_tape);

        entropy_sum += policy_entropy(&out.policy).mean().unwrap_or(0.0);
        value_loss_sum += value_loss(&out.value, r_hat)?;
    }
    Ok((tape, entropy_sum / steps as f64, value_loss_sum / steps as f64))
}
