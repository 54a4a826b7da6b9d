//! Named parameter registry and the per-forward binding context.

use std::cell::RefCell;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::ssm::{init_a_log, init_delta_bias, ScanMode};
use crate::tensor::{numel, Float, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// `U(−bound, bound)`.
    Uniform(f64),
    Zeros,
    Ones,
    /// `ln(n + 1)` along the state axis, so `A = −(n + 1)`.
    ALogRamp,
    /// Inverse softplus of a log-uniform step.
    DeltaBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Collects parameter specs in a fixed order while a model is laid out.
#[derive(Debug, Default)]
pub struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(self.specs.iter().all(|s| s.name != name), "duplicate parameter {name}");
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn into_specs(self) -> Vec<ParamSpec> {
        self.specs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Float> ParamStore<T> {
    /// Draws every parameter from one seeded stream, in spec order.
    pub fn materialize(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| {
                let t = match s.init {
                    Init::Uniform(b) => {
                        let d: Vec<f64> = (0..numel(&s.shape)).map(|_| rng.gen_range(-b..b)).collect();
                        Tensor::from_f64(s.shape.clone(), &d).expect("spec shape")
                    }
                    Init::Zeros => Tensor::zeros(&s.shape),
                    Init::Ones => Tensor::ones(&s.shape),
                    Init::ALogRamp => init_a_log(s.shape[0], s.shape[1]),
                    Init::DeltaBias => init_delta_bias(s.shape[0], &mut rng),
                };
                Arc::new(t)
            })
            .collect();
        Self {
            names: specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    pub fn from_parts(names: Vec<String>, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if names.len() != tensors.len() {
            return Err(Error::invalid("parameter names and tensors differ in count"));
        }
        Ok(Self {
            names,
            tensors: tensors.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t.as_ref()))
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Checks names and shapes against a layout.
    pub fn check_specs(&self, specs: &[ParamSpec]) -> Result<()> {
        if specs.len() != self.len() {
            return Err(Error::Data(format!("{} parameters, layout expects {}", self.len(), specs.len())));
        }
        for (s, (n, t)) in specs.iter().zip(self.names.iter().zip(&self.tensors)) {
            if &s.name != n || s.shape != t.shape() {
                return Err(Error::Data(format!("parameter {n} {:?} does not match layout {} {:?}", t.shape(), s.name, s.shape)));
            }
        }
        Ok(())
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor<T>> {
        Arc::clone(&self.tensors[id.0])
    }
}

/// Everything one forward pass needs: the tape, every parameter bound on it,
/// the mode flag and the dropout stream.
pub struct Ctx<'t, T: Float> {
    pub tape: &'t Tape<T>,
    vars: Vec<Var<'t, T>>,
    pub training: bool,
    pub scan_mode: ScanMode,
    rng: RefCell<ChaCha8Rng>,
}

impl<'t, T: Float> Ctx<'t, T> {
    /// Binds all parameters; `requires_grad` decides whether they are
    /// trainable leaves or constants.
    pub fn new(tape: &'t Tape<T>, store: &ParamStore<T>, requires_grad: bool, training: bool, seed: u64) -> Self {
        let vars = store
            .ids()
            .map(|id| {
                if requires_grad {
                    tape.param_shared(store.shared(id))
                } else {
                    tape.constant_shared(store.shared(id))
                }
            })
            .collect();
        Self {
            tape,
            vars,
            training,
            scan_mode: ScanMode::Sequential,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn with_scan_mode(mut self, mode: ScanMode) -> Self {
        self.scan_mode = mode;
        self
    }

    /// Replaces one bound parameter, e.g. to differentiate with respect to it.
    pub fn set(&mut self, id: ParamId, v: Var<'t, T>) {
        self.vars[id.0] = v;
    }

    pub fn p(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }

    pub fn dropout(&self, x: Var<'t, T>, rate: f64) -> Result<Var<'t, T>> {
        x.dropout(rate, self.training, &mut *self.rng.borrow_mut())
    }
}
