use std::path::Path;

use cine_core::derive_seed;
use cine_core::io::write_csv;
use cine_core::slicing::{augment, AugmentOps, Perspective, SliceSample};
use cine_nn::{loss_l2, Mode, Tensor, UNet};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::optim::{lr_schedule, sgd_step};
use crate::TrainError;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const AUGMENT_STREAM: u64 = 3;
const VALIDATION_STREAM: u64 = 4;
/// Samples per forward pass when scoring validation data.
const EVAL_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

/// Per-step training loss and the periodic validation loss.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub const CSV_HEADER: [&'static str; 4] = ["step", "lr", "train_loss", "val_loss"];

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let rows = self.rows.iter().map(|r| {
            [
                r.step.to_string(),
                format!("{:e}", r.lr),
                format!("{:e}", r.train_loss),
                r.val_loss.map(|v| format!("{v:e}")).unwrap_or_default(),
            ]
        });
        write_csv(path, &Self::CSV_HEADER, rows)?;
        Ok(())
    }

    pub fn first_train_loss(&self) -> Option<f64> {
        self.rows.first().map(|r| r.train_loss)
    }

    pub fn last_train_loss(&self) -> Option<f64> {
        self.rows.last().map(|r| r.train_loss)
    }

    pub fn validation(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.rows.iter().filter_map(|r| r.val_loss.map(|v| (r.step, v)))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: UNet<f32>,
    pub trace: LossTrace,
    /// Number of completed update steps, counting any resumed prefix.
    pub steps_done: usize,
}

/// Stacks samples into an `f32` batch tensor of inputs and one of labels.
pub fn batch_tensors<'a>(samples: impl IntoIterator<Item = &'a SliceSample>) -> (Tensor<f32>, Tensor<f32>) {
    let mut shape = [0usize; 4];
    let mut input = Vec::new();
    let mut label = Vec::new();
    for s in samples {
        let (c, h, w) = s.input.dim();
        shape = [shape[0] + 1, c, h, w];
        input.extend(s.input.iter().map(|&v| v as f32));
        label.extend(s.label.iter().map(|&v| v as f32));
    }
    let input = Tensor::from_vec(shape, input).expect("consistent sample shapes");
    let label = Tensor::from_vec(shape, label).expect("consistent sample shapes");
    (input, label)
}

fn check_dataset(samples: &[SliceSample], config: &TrainConfig) -> Result<(), TrainError> {
    let first = samples.first().ok_or(TrainError::Empty)?;
    let shape = first.input.dim();
    for s in samples {
        if !config.domain.kinds().contains(&s.origin.kind) {
            return Err(TrainError::Mismatch(format!("{} sample in a {} run", s.origin.kind, config.domain)));
        }
        if s.input.dim() != shape || s.label.dim() != shape {
            return Err(TrainError::Mismatch(format!("sample shapes {:?} and {:?} differ", s.input.dim(), shape)));
        }
    }
    Ok(())
}

/// Index of the sample used at global position `pos` of the sample stream:
/// epoch `e` visits a fresh permutation seeded by `(seed, e)`.
struct SampleStream {
    seed: u64,
    n: usize,
    epoch: usize,
    order: Vec<usize>,
}

impl SampleStream {
    fn new(seed: u64, n: usize) -> Self {
        Self { seed, n, epoch: usize::MAX, order: Vec::new() }
    }

    fn at(&mut self, pos: usize) -> usize {
        let epoch = pos / self.n;
        if epoch != self.epoch {
            self.order = (0..self.n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, epoch as u64));
            self.order.shuffle(&mut rng);
            self.epoch = epoch;
        }
        self.order[pos % self.n]
    }
}

/// Mean squared norm of `net(input) − label` over `samples` in eval mode.
pub fn evaluate_loss(net: &mut UNet<f32>, samples: &[&SliceSample]) -> Result<f64, TrainError> {
    let mut total = 0.0;
    for chunk in samples.chunks(EVAL_CHUNK) {
        let (x, y) = batch_tensors(chunk.iter().copied());
        let out = net.forward(&x, Mode::Eval)?;
        total += loss_l2(&out, &y)?.0 * chunk.len() as f64;
    }
    net.clear_cache();
    Ok(total / samples.len().max(1) as f64)
}

/// Runs SGD for `config.total_steps` steps. With `resume = Some((net, step))`
/// training continues from that network at that step, following the same
/// schedule, batch order and augmentation draws as an uninterrupted run.
pub fn train(
    train_set: &[SliceSample],
    val_set: &[SliceSample],
    config: &TrainConfig,
    resume: Option<(UNet<f32>, usize)>,
) -> Result<TrainOutcome, TrainError> {
    train_until(train_set, val_set, config, resume, config.total_steps)
}

/// [`train`], stopping after step `until` of the configured run.
pub fn train_until(
    train_set: &[SliceSample],
    val_set: &[SliceSample],
    config: &TrainConfig,
    resume: Option<(UNet<f32>, usize)>,
    until: usize,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let until = until.min(config.total_steps);
    check_dataset(train_set, config)?;
    if !val_set.is_empty() {
        check_dataset(val_set, config)?;
    }
    let (c, h, w) = train_set[0].input.dim();
    let n_phases = match config.domain {
        Perspective::Xyt => c,
        Perspective::XtYt => w,
        Perspective::Xy => 1,
    };
    let net_config = config.unet_config(n_phases);
    let (mut net, start) = match resume {
        Some((net, step)) => {
            if net.config() != &net_config {
                return Err(TrainError::Mismatch(format!("checkpoint network {:?} vs {:?}", net.config(), net_config)));
            }
            (net, step.min(config.total_steps))
        }
        None => (UNet::new(net_config, derive_seed(config.seed, INIT_STREAM))?, 0),
    };
    net_config.check_input(h, w)?;

    let val_subset: Vec<&SliceSample> = {
        let mut idx: Vec<usize> = (0..val_set.len()).collect();
        if idx.len() > config.val_limit {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, VALIDATION_STREAM));
            idx.shuffle(&mut rng);
            idx.truncate(config.val_limit);
            idx.sort_unstable();
        }
        idx.into_iter().map(|i| &val_set[i]).collect()
    };

    let mut stream = SampleStream::new(derive_seed(config.seed, SHUFFLE_STREAM), train_set.len());
    let augment_seed = derive_seed(config.seed, AUGMENT_STREAM);
    let mode = config.label_mode();
    let val_every = config.val_every();
    let mut trace = LossTrace::default();

    for step in start..until {
        let picks: Vec<usize> = (0..config.batch_size).map(|j| stream.at(step * config.batch_size + j)).collect();
        let batch: Vec<SliceSample> = if config.augment {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(augment_seed, step as u64));
            picks
                .iter()
                .map(|&i| {
                    let s = &train_set[i];
                    let ops = AugmentOps::random(&mut rng, s.origin.kind, n_phases, config.augment_offset);
                    augment(s, &ops, mode)
                })
                .collect::<Result<_, _>>()?
        } else {
            picks.iter().map(|&i| train_set[i].clone()).collect()
        };
        let (x, y) = batch_tensors(&batch);
        let lr = lr_schedule(step, config.total_steps, config.lr_start, config.lr_end);
        net.zero_grad();
        let out = net.forward(&x, Mode::Train)?;
        let (loss, grad) = loss_l2(&out, &y)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        net.backward(&grad)?;
        sgd_step(&mut net, lr);
        let done = step + 1;
        let val_loss = if !val_subset.is_empty() && (done % val_every == 0 || done == config.total_steps) {
            let v = evaluate_loss(&mut net, &val_subset)?;
            if !v.is_finite() {
                return Err(TrainError::NonFinite { step });
            }
            Some(v)
        } else {
            None
        };
        trace.rows.push(TraceRow { step: done, lr, train_loss: loss, val_loss });
    }
    net.clear_cache();
    Ok(TrainOutcome { net, trace, steps_done: until.max(start) })
}
