use std::cell::RefCell;
use std::collections::{HashMap, HashSet};

use super::{Result, Tensor, TensorError};

/// Vector-Jacobian product: upstream gradient in, one optional gradient per input out.
pub(crate) type Vjp = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>>>;

struct Record {
    inputs: Vec<Tensor>,
    output: u64,
    vjp: Vjp,
}

/// Ordered log of executed operations.
///
/// Gradients flow only through operations recorded on the same tape; every
/// input that is either a parameter or the output of an earlier recorded
/// operation is tracked.
pub struct Tape {
    enabled: bool,
    records: RefCell<Vec<Record>>,
    produced: RefCell<HashSet<u64>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { enabled: true, records: RefCell::new(Vec::new()), produced: RefCell::new(HashSet::new()) }
    }

    /// A tape that never records; used for inference and finite differences.
    pub fn no_grad() -> Self {
        Tape { enabled: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.records.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn tracked(&self, t: &Tensor) -> bool {
        t.requires_grad() || self.produced.borrow().contains(&t.id())
    }

    /// Whether an operation on `inputs` needs a backward closure at all.
    pub(crate) fn wants(&self, inputs: &[&Tensor]) -> bool {
        self.enabled && inputs.iter().any(|t| self.tracked(t))
    }

    pub(crate) fn record(&self, inputs: &[&Tensor], output: &Tensor, vjp: Vjp) {
        if !self.wants(inputs) {
            return;
        }
        self.produced.borrow_mut().insert(output.id());
        self.records.borrow_mut().push(Record {
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            output: output.id(),
            vjp,
        });
    }

    /// Reverse-mode accumulation from a scalar `loss` into every reachable parameter.
    ///
    /// Calling it twice without clearing gradients adds the gradients twice.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if loss.requires_grad() && !self.produced.borrow().contains(&loss.id()) {
            loss.accumulate_grad(&[1.0]);
            return Ok(());
        }
        if !self.produced.borrow().contains(&loss.id()) {
            return Err(TensorError::Usage("backward: loss was not produced on this tape".into()));
        }

        let records = self.records.borrow();
        let mut grads: HashMap<u64, Vec<f64>> = HashMap::new();
        grads.insert(loss.id(), vec![1.0]);
        let mut leaves: HashMap<u64, Tensor> = HashMap::new();

        for rec in records.iter().rev() {
            let Some(upstream) = grads.remove(&rec.output) else {
                continue;
            };
            let input_grads = (rec.vjp)(&upstream);
            debug_assert_eq!(input_grads.len(), rec.inputs.len());
            for (input, g) in rec.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.tracked(input) {
                    continue;
                }
                if input.requires_grad() {
                    leaves.entry(input.id()).or_insert_with(|| input.clone());
                }
                match grads.get_mut(&input.id()) {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(&g) {
                            *a += b;
                        }
                    }
                    None => {
                        grads.insert(input.id(), g);
                    }
                }
            }
        }

        for (id, leaf) in leaves {
            if let Some(g) = grads.get(&id) {
                leaf.accumulate_grad(g);
            }
        }
        Ok(())
    }
}
