//! Random op-graphs: analytic gradients against central differences in f64.

use std::sync::Arc;
use std::time::Instant;

use flowgnn::nn::{zero_grads, ParamId, ParamSet, Tape, Tensor, Var};
use flowgnn::seed;
use rand::Rng;

use crate::tol::{GRADCHECK_BUDGET, GRADCHECK_CASES, GRADCHECK_EPS, GRADCHECK_MAX_REL_ERR, GRADCHECK_REL_FLOOR};
use crate::Outcome;

/// Relu inputs closer than this to the kink make a graph non-differentiable
/// at the finite-difference scale; such graphs are redrawn.
const KINK_MARGIN: f64 = 1e-3;

enum Step {
    Param(ParamId),
    Const(Tensor<f64>),
    MatMul(usize, usize),
    Add(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Concat(Vec<usize>),
    Gather(usize, Arc<[u32]>),
    SegmentMean(usize, Arc<[u32]>, usize),
    Dropout(usize, u64),
    Sum(usize),
    Mean(usize),
    Bce(usize, Vec<f64>),
    CrossEntropy(usize, Vec<usize>),
}

struct Program {
    params: ParamSet<f64>,
    steps: Vec<Step>,
    dims: Vec<(usize, usize)>,
}

impl Program {
    fn push(&mut self, step: Step, dims: (usize, usize)) -> usize {
        self.steps.push(step);
        self.dims.push(dims);
        self.steps.len() - 1
    }

    fn param(&mut self, rows: usize, cols: usize, rng: &mut seed::Rng) -> usize {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
        let name = format!("p{}", self.params.len());
        let id = self
            .params
            .insert(name, Tensor::new(vec![rows, cols], data).unwrap())
            .unwrap();
        self.push(Step::Param(id), (rows, cols))
    }

    fn constant(&mut self, rows: usize, cols: usize, rng: &mut seed::Rng) -> usize {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        self.push(Step::Const(Tensor::new(vec![rows, cols], data).unwrap()), (rows, cols))
    }

    /// An existing value of the given shape, or a fresh parameter.
    fn operand(&mut self, dims: (usize, usize), exclude: usize, rng: &mut seed::Rng) -> usize {
        let same: Vec<usize> = (0..self.dims.len())
            .filter(|&i| i != exclude && self.dims[i] == dims)
            .collect();
        if !same.is_empty() && rng.random_bool(0.5) {
            same[rng.random_range(0..same.len())]
        } else {
            self.param(dims.0, dims.1, rng)
        }
    }

    fn random(rng: &mut seed::Rng) -> Program {
        let mut p = Program {
            params: ParamSet::new(),
            steps: Vec::new(),
            dims: Vec::new(),
        };
        let dim = |rng: &mut seed::Rng| rng.random_range(1..=4usize);
        let (r, c) = (dim(rng), dim(rng));
        let mut cur = p.param(r, c, rng);
        for _ in 0..rng.random_range(2..=8) {
            let (r, c) = p.dims[cur];
            cur = match rng.random_range(0..13) {
                0 => {
                    let b = p.param(c, dim(rng), rng);
                    p.push(Step::MatMul(cur, b), (r, p.dims[b].1))
                }
                1 => {
                    let b = p.operand((r, c), cur, rng);
                    p.push(Step::Add(cur, b), (r, c))
                }
                2 => {
                    let b = p.param(1, c, rng);
                    p.push(Step::Add(cur, b), (r, c))
                }
                3 => {
                    let b = p.operand((r, c), cur, rng);
                    p.push(Step::Mul(cur, b), (r, c))
                }
                4 => {
                    let s = rng.random_range(-2.0..2.0);
                    p.push(Step::Scale(cur, s), (r, c))
                }
                5 => p.push(Step::Relu(cur), (r, c)),
                6 => p.push(Step::Sigmoid(cur), (r, c)),
                7 => {
                    let b = p.operand((r, dim(rng)), cur, rng);
                    let cols = c + p.dims[b].1;
                    p.push(Step::Concat(vec![cur, b]), (r, cols))
                }
                8 => {
                    let n = rng.random_range(1..=5);
                    let idx: Arc<[u32]> = (0..n).map(|_| rng.random_range(0..r as u32)).collect();
                    p.push(Step::Gather(cur, idx), (n, c))
                }
                9 => {
                    let n = rng.random_range(1..=4);
                    let ids: Arc<[u32]> = (0..r).map(|_| rng.random_range(0..n as u32)).collect();
                    p.push(Step::SegmentMean(cur, ids, n), (n, c))
                }
                10 => {
                    let s = rng.random();
                    p.push(Step::Dropout(cur, s), (r, c))
                }
                11 => p.push(Step::Sum(cur), (1, 1)),
                _ => p.push(Step::Mean(cur), (1, 1)),
            };
        }

        let (r, c) = p.dims[cur];
        let head = match rng.random_range(0..3) {
            0 => {
                let t = (0..r * c).map(|_| rng.random_range(0.0..=1.0)).collect();
                p.push(Step::Bce(cur, t), (1, 1))
            }
            1 => {
                let t = (0..r).map(|_| rng.random_range(0..c)).collect();
                p.push(Step::CrossEntropy(cur, t), (1, 1))
            }
            _ => {
                let w = p.constant(r, c, rng);
                let m = p.push(Step::Mul(cur, w), (r, c));
                p.push(Step::Sum(m), (1, 1))
            }
        };
        // side terms reach values the head does not depend on
        let mut loss = head;
        for v in 0..head {
            if matches!(p.steps[v], Step::Const(_)) || !rng.random_bool(0.5) {
                continue;
            }
            let (r, c) = p.dims[v];
            let w = p.constant(r, c, rng);
            let m = p.push(Step::Mul(v, w), (r, c));
            let s = p.push(Step::Sum(m), (1, 1));
            loss = p.push(Step::Add(loss, s), (1, 1));
        }
        p
    }

    /// Forward pass; returns the tape, the loss and the smallest |relu input|.
    fn forward(&self) -> (Tape<f64>, Var, f64) {
        let mut tape = Tape::<f64>::new();
        let mut vars: Vec<Var> = Vec::with_capacity(self.steps.len());
        let mut kink = f64::INFINITY;
        for step in &self.steps {
            let v = match step {
                Step::Param(id) => tape.param(&self.params, *id),
                Step::Const(t) => tape.constant(t),
                Step::MatMul(a, b) => tape.matmul(vars[*a], vars[*b]).unwrap(),
                Step::Add(a, b) => tape.add(vars[*a], vars[*b]).unwrap(),
                Step::Mul(a, b) => tape.mul(vars[*a], vars[*b]).unwrap(),
                Step::Scale(a, s) => tape.scale(vars[*a], *s),
                Step::Relu(a) => {
                    kink = tape.value(vars[*a]).iter().fold(kink, |m, x| m.min(x.abs()));
                    tape.relu(vars[*a])
                }
                Step::Sigmoid(a) => tape.sigmoid(vars[*a]),
                Step::Concat(parts) => {
                    let parts: Vec<Var> = parts.iter().map(|&i| vars[i]).collect();
                    tape.concat(&parts).unwrap()
                }
                Step::Gather(a, idx) => tape.row_gather(vars[*a], idx.clone()).unwrap(),
                Step::SegmentMean(a, ids, n) => tape.segment_mean(vars[*a], ids.clone(), *n).unwrap(),
                Step::Dropout(a, s) => tape.dropout(vars[*a], 0.5, true, &mut seed::rng(*s)).unwrap(),
                Step::Sum(a) => tape.sum(vars[*a]),
                Step::Mean(a) => tape.mean(vars[*a]).unwrap(),
                Step::Bce(a, t) => tape.bce_with_logits(vars[*a], t).unwrap(),
                Step::CrossEntropy(a, t) => tape.cross_entropy(vars[*a], t).unwrap(),
            };
            vars.push(v);
        }
        let loss = *vars.last().unwrap();
        (tape, loss, kink)
    }

    fn loss(&self) -> f64 {
        let (tape, loss, _) = self.forward();
        tape.value(loss)[0]
    }

    /// Largest relative error over every parameter element.
    fn max_rel_error(&mut self) -> f64 {
        zero_grads(&mut self.params);
        let (tape, loss, _) = self.forward();
        tape.backward(loss, &mut self.params).unwrap();
        let analytic: Vec<Vec<f64>> = self
            .params
            .iter()
            .map(|p| p.tensor.grad.clone().unwrap_or_else(|| vec![0.0; p.tensor.numel()]))
            .collect();
        let mut worst = 0f64;
        for (pi, grads) in analytic.iter().enumerate() {
            for (i, &a) in grads.iter().enumerate() {
                let x = self.params.get(ParamId(pi)).tensor.data()[i];
                self.params.get_mut(ParamId(pi)).tensor.data_mut()[i] = x + GRADCHECK_EPS;
                let up = self.loss();
                self.params.get_mut(ParamId(pi)).tensor.data_mut()[i] = x - GRADCHECK_EPS;
                let down = self.loss();
                self.params.get_mut(ParamId(pi)).tensor.data_mut()[i] = x;
                let n = (up - down) / (2.0 * GRADCHECK_EPS);
                let err = (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_REL_FLOOR);
                worst = worst.max(err);
            }
        }
        worst
    }
}

pub fn check() -> Outcome {
    let started = Instant::now();
    let mut rng = seed::rng(seed::derive(0, "acceptance.gradcheck"));
    let (mut worst, mut redrawn, mut n_params) = (0f64, 0usize, 0usize);
    let mut done = 0;
    while done < GRADCHECK_CASES {
        let mut program = Program::random(&mut rng);
        if program.forward().2 < KINK_MARGIN {
            redrawn += 1;
            continue;
        }
        n_params += program.params.iter().map(|p| p.tensor.numel()).sum::<usize>();
        worst = worst.max(program.max_rel_error());
        done += 1;
    }
    let elapsed = started.elapsed();
    Outcome::new(
        worst < GRADCHECK_MAX_REL_ERR && elapsed < GRADCHECK_BUDGET,
        format!(
            "{done} graphs, {n_params} parameters, max rel err {worst:.2e} (< {GRADCHECK_MAX_REL_ERR:e}), \
             {redrawn} redrawn near relu kinks, {:.1}s (< {}s)",
            elapsed.as_secs_f64(),
            GRADCHECK_BUDGET.as_secs()
        ),
    )
}
