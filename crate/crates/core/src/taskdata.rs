//! The eight primitive vector functions and task-labelled samples.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NUM_PRIMITIVES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimitiveId {
    /// Shift every element right one slot; the last wraps to the front.
    Rotate,
    /// Add the second half onto the first half.
    AddAB,
    /// Rotate only the first half.
    RotA,
    /// Exchange the two halves.
    Switch,
    Zero,
    /// Zero only the first half.
    ZeroA,
    AddOne,
    /// Swap the first two elements.
    SwapFirst,
}

impl PrimitiveId {
    pub const ALL: [PrimitiveId; NUM_PRIMITIVES] = [
        PrimitiveId::Rotate,
        PrimitiveId::AddAB,
        PrimitiveId::RotA,
        PrimitiveId::Switch,
        PrimitiveId::Zero,
        PrimitiveId::ZeroA,
        PrimitiveId::AddOne,
        PrimitiveId::SwapFirst,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveId::Rotate => "rotate",
            PrimitiveId::AddAB => "add-a-b",
            PrimitiveId::RotA => "rot-a",
            PrimitiveId::Switch => "switch",
            PrimitiveId::Zero => "zero",
            PrimitiveId::ZeroA => "zero-a",
            PrimitiveId::AddOne => "add-one",
            PrimitiveId::SwapFirst => "swap-first",
        }
    }

    pub fn one_hot(self) -> Tensor {
        let mut v = vec![0.0; NUM_PRIMITIVES];
        v[self.index()] = 1.0;
        Tensor::vector(v)
    }
}

impl fmt::Display for PrimitiveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PrimitiveId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown primitive {s:?}")))
    }
}

/// Applies a primitive to an even-length vector.
pub fn apply_primitive(id: PrimitiveId, v: &Tensor) -> Result<Tensor> {
    if v.rank() != 1 || v.len() % 2 != 0 {
        return Err(Error::Dimension {
            context: format!("primitive {id} needs an even-length vector"),
            expected: vec![v.len() + v.len() % 2],
            got: v.shape().to_vec(),
        });
    }
    let mut out = v.data().to_vec();
    apply_in_place(id, &mut out);
    Ok(Tensor::vector(out))
}

fn apply_in_place(id: PrimitiveId, v: &mut [f64]) {
    let half = v.len() / 2;
    match id {
        PrimitiveId::Rotate => v.rotate_right(1),
        PrimitiveId::AddAB => {
            for i in 0..half {
                v[i] += v[half + i];
            }
        }
        PrimitiveId::RotA => v[..half].rotate_right(1),
        PrimitiveId::Switch => {
            let (a, b) = v.split_at_mut(half);
            a.swap_with_slice(b);
        }
        PrimitiveId::Zero => v.fill(0.0),
        PrimitiveId::ZeroA => v[..half].fill(0.0),
        PrimitiveId::AddOne => v.iter_mut().for_each(|x| *x += 1.0),
        PrimitiveId::SwapFirst => v.swap(0, 1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSample {
    pub input: Tensor,
    pub task: PrimitiveId,
    pub one_hot: Tensor,
    pub target: Tensor,
}

impl TaskSample {
    pub fn new(input: Tensor, task: PrimitiveId) -> Result<Self> {
        let target = apply_primitive(task, &input)?;
        Ok(TaskSample {
            input,
            task,
            one_hot: task.one_hot(),
            target,
        })
    }
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    input: &'a [f64],
    task: PrimitiveId,
    target: &'a [f64],
}

/// Writes one JSON object per line with fields `input`, `task`, `target`.
pub fn write_jsonl<W: Write>(samples: &[TaskSample], mut out: W) -> Result<()> {
    for s in samples {
        let rec = SampleRecord {
            input: s.input.data(),
            task: s.task,
            target: s.target.data(),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Seeded stream of task samples.
#[derive(Debug, Clone)]
pub struct TaskSampler {
    rng: ChaCha8Rng,
    dim: usize,
}

impl TaskSampler {
    pub fn new(seed: u64, dim: usize) -> Result<Self> {
        if dim < 2 || dim % 2 != 0 {
            return Err(Error::Domain(format!("task dim must be even and >= 2, got {dim}")));
        }
        Ok(TaskSampler {
            rng: ChaCha8Rng::seed_from_u64(seed),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sample(&mut self, task: Option<PrimitiveId>) -> TaskSample {
        let input: Vec<f64> = (0..self.dim).map(|_| self.rng.gen::<f64>()).collect();
        let task = task.unwrap_or_else(|| PrimitiveId::ALL[self.rng.gen_range(0..NUM_PRIMITIVES)]);
        TaskSample::new(Tensor::vector(input), task).expect("dim is even")
    }

    pub fn batch(&mut self, batch_size: usize, task: Option<PrimitiveId>) -> Vec<TaskSample> {
        (0..batch_size).map(|_| self.sample(task)).collect()
    }
}

/// Inputs i.i.d. uniform in `[0,1]^dim`; tasks fixed or uniform over the eight.
pub fn sample_batch(
    seed: u64,
    dim: usize,
    batch_size: usize,
    task: Option<PrimitiveId>,
) -> Result<Vec<TaskSample>> {
    if batch_size == 0 {
        return Err(Error::Domain("batch_size must be >= 1".into()));
    }
    Ok(TaskSampler::new(seed, dim)?.batch(batch_size, task))
}

/// Fixed-seed validation set with `per_task` samples of each listed task.
pub fn validation_set(seed: u64, dim: usize, per_task: usize, tasks: &[PrimitiveId]) -> Result<Vec<TaskSample>> {
    let mut sampler = TaskSampler::new(seed, dim)?;
    Ok(tasks
        .iter()
        .flat_map(|&t| sampler.batch(per_task, Some(t)))
        .collect())
}
