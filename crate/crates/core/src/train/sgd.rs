use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backward::{backward, Gradients};
use super::loss::loss_softmax_ce;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::forward::{accuracy, forward_layered};
use crate::net::{Init, Network, SkipWeights};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            learning_rate: 0.05,
            batch_size: 64,
            epochs: 10,
            rng_seed: 0,
        }
    }
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One skip strength per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct TSchedule {
    per_epoch_t: Vec<f64>,
}

impl TSchedule {
    pub fn new(per_epoch_t: Vec<f64>) -> Result<Self> {
        if let Some(t) = per_epoch_t.iter().find(|t| !(0.0..=1.0).contains(*t)) {
            return Err(Error::Range(format!("schedule value {t} outside [0, 1]")));
        }
        Ok(TSchedule { per_epoch_t })
    }

    /// Ten epochs decaying from 0.9 to 0.
    pub fn decay_from_0_9() -> Self {
        TSchedule {
            per_epoch_t: vec![0.9, 0.7, 0.5, 0.3, 0.2, 0.1, 0.05, 0.025, 0.01, 0.0],
        }
    }

    /// Ten epochs starting at 0.5, with a brief bump before ending at 0.
    pub fn decay_from_0_5() -> Self {
        TSchedule {
            per_epoch_t: vec![0.5, 0.4, 0.3, 0.2, 0.1, 0.05, 0.025, 0.01, 0.05, 0.0],
        }
    }

    pub fn constant(t: f64, epochs: usize) -> Result<Self> {
        TSchedule::new(vec![t; epochs])
    }

    pub fn values(&self) -> &[f64] {
        &self.per_epoch_t
    }

    pub fn len(&self) -> usize {
        self.per_epoch_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_epoch_t.is_empty()
    }

    pub fn ends_at_zero(&self) -> bool {
        self.per_epoch_t.last() == Some(&0.0)
    }
}

impl FromStr for TSchedule {
    type Err = Error;

    /// Comma-separated values, or `decay0.9` / `decay0.5` for the two
    /// ten-epoch decays.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "decay0.9" => return Ok(TSchedule::decay_from_0_9()),
            "decay0.5" => return Ok(TSchedule::decay_from_0_5()),
            _ => {}
        }
        let values = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad schedule value '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        TSchedule::new(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub t: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,t,train_loss,val_accuracy,wall_ms";

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            writeln!(
                s,
                "{},{:.16e},{:.16e},{:.16e},{}",
                r.epoch, r.t, r.train_loss, r.val_accuracy, r.wall_ms
            )
            .expect("writing to a String");
        }
        s
    }

    /// Equal in everything except wall-clock time.
    pub fn same_outcome(&self, other: &TrainHistory) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| {
                a.epoch == b.epoch
                    && a.t.to_bits() == b.t.to_bits()
                    && a.train_loss.to_bits() == b.train_loss.to_bits()
                    && a.val_accuracy.to_bits() == b.val_accuracy.to_bits()
            })
    }

    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.last().map(|r| r.val_accuracy)
    }
}

fn sample_gradient(net: &Network, data: &Dataset, idx: usize) -> Result<(f64, Gradients)> {
    let (logits, trace) = forward_layered(net, &data.images[idx], true)?;
    let (loss, dlogits) = loss_softmax_ce(&logits, data.labels[idx])?;
    Ok((loss, backward(net, &trace.expect("trace requested"), &dlogits)?))
}

/// Summed loss and gradient over `batch`; samples may run in parallel but
/// are reduced in batch order.
pub(crate) fn batch_gradient(net: &Network, data: &Dataset, batch: &[usize]) -> Result<(f64, Gradients)> {
    let per_sample = par::map_slice(batch, |&i| sample_gradient(net, data, i));
    let mut total = Gradients::zeros_like(net);
    let mut loss = 0.0;
    for r in per_sample {
        let (l, g) = r?;
        loss += l;
        total.accumulate(&g);
    }
    Ok((loss, total))
}

/// `param -= lr * grad_sum / n`
pub(crate) fn apply_update(net: &mut Network, grads: &Gradients, lr: f64, n: usize) {
    let n = n as f64;
    for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
        layer.update_params(|w, b| {
            for (p, d) in w.iter_mut().zip(&g.weights) {
                *p -= lr * (d / n);
            }
            for (p, d) in b.iter_mut().zip(&g.bias) {
                *p -= lr * (d / n);
            }
        });
    }
}

/// Shuffled visiting order for `epoch`, from the config seed alone.
pub fn epoch_order(len: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng);
    order
}

/// One pass of minibatch SGD at skip strength `t`. Returns the updated
/// network and the mean loss seen during the pass.
pub fn sgd_epoch(net: &Network, data: &Dataset, config: &SgdConfig, t: f64, epoch: usize) -> Result<(Network, f64)> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut net = net.set_uniform_skip(t)?;
    let order = epoch_order(data.len(), config.rng_seed, epoch);
    let mut loss_sum = 0.0;
    for batch in order.chunks(config.batch_size) {
        let (loss, grads) = batch_gradient(&net, data, batch)?;
        loss_sum += loss;
        apply_update(&mut net, &grads, config.learning_rate, batch.len());
    }
    Ok((net, loss_sum / data.len() as f64))
}

/// Train one epoch per schedule entry, setting `t` before each epoch and
/// measuring validation accuracy after it.
pub fn train_scheduled(
    net: &Network,
    train: &Dataset,
    val: &Dataset,
    config: &SgdConfig,
    schedule: &TSchedule,
) -> Result<(Network, TrainHistory)> {
    if schedule.len() != config.epochs {
        return Err(Error::Config(format!(
            "schedule has {} values for {} epochs",
            schedule.len(),
            config.epochs
        )));
    }
    let mut net = net.clone();
    let mut history = TrainHistory::default();
    for (epoch, &t) in schedule.values().iter().enumerate() {
        let start = Instant::now();
        let (next, train_loss) = sgd_epoch(&net, train, config, t, epoch)?;
        net = next;
        let val_accuracy = accuracy(&net, &val.images, &val.labels)?;
        history.records.push(EpochRecord {
            epoch: epoch + 1,
            t,
            train_loss,
            val_accuracy,
            wall_ms: start.elapsed().as_millis() as u64,
        });
    }
    Ok((net, history))
}

/// Drop all skip bookkeeping from a network whose skips carry no weight.
/// The result evaluates bit-identically without any mixing work.
pub fn excise_skips(net: &Network) -> Result<Network> {
    for (k, i, t) in net.skips.entries() {
        let want = if k + 1 == i { 1.0 } else { 0.0 };
        if t != want {
            return Err(Error::CannotExcise { from: k, to: i, weight: t });
        }
    }
    Network::new(
        net.input_shape,
        net.num_classes,
        net.layers.clone(),
        SkipWeights::feed_forward(net.depth()),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub t: f64,
    pub mean_val_accuracy: f64,
    pub trials: usize,
}

pub const SWEEP_HEADER: &str = "t,mean_val_accuracy,trials";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(s, "{:.16e},{:.16e},{}", r.t, r.mean_val_accuracy, r.trials).expect("writing to a String");
    }
    s
}

/// Train at each fixed `t` over `trials` seeded runs and average the final
/// validation accuracy. Trial 0 starts from `template` with the config
/// seed; trial `j` re-initializes with seed `rng_seed + j` and trains with
/// that seed too.
pub fn sweep_t(
    template: &Network,
    train: &Dataset,
    val: &Dataset,
    config: &SgdConfig,
    t_values: &[f64],
    trials: usize,
) -> Result<Vec<SweepRow>> {
    if let Some(t) = t_values.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Range(format!("sweep value t = {t} outside [0, 1]")));
    }
    if trials == 0 {
        return Err(Error::Config("sweep needs at least one trial".into()));
    }
    let jobs: Vec<(usize, usize)> = (0..t_values.len())
        .flat_map(|n| (0..trials).map(move |j| (n, j)))
        .collect();
    let results = par::map_slice(&jobs, |&(n, j)| -> Result<f64> {
        let seed = config.rng_seed.wrapping_add(j as u64);
        let start = if j == 0 {
            template.clone()
        } else {
            template.reinitialize(Init::Uniform, seed)
        };
        let cfg = SgdConfig { rng_seed: seed, ..*config };
        let schedule = TSchedule::constant(t_values[n], cfg.epochs)?;
        let (_, history) = train_scheduled(&start, train, val, &cfg, &schedule)?;
        Ok(history.final_accuracy().unwrap_or(0.0))
    });
    let mut rows: Vec<SweepRow> = t_values
        .iter()
        .map(|&t| SweepRow {
            t,
            mean_val_accuracy: 0.0,
            trials,
        })
        .collect();
    for ((n, _), acc) in jobs.iter().zip(results) {
        rows[*n].mean_val_accuracy += acc?;
    }
    for r in &mut rows {
        r.mean_val_accuracy /= trials as f64;
    }
    Ok(rows)
}
