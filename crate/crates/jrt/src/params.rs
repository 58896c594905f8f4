//! Learnable parameter tree.
//!
//! Every struct is generic over the leaf type `L`: storage uses
//! `Tensor<T>`, a forward pass maps the tree onto graph `TensorId`s.
//! `for_each` walks leaves in a stable field order with hierarchical
//! names ("fusion.0.w_q"), which checkpointing, the optimizer, and
//! gradient checking all rely on.

use crate::numerics::{BlockAccess, Scalar, Tensor};
use crate::rng::Rng;

/// Architecture dimensions, fixed at model construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Fusion layer count L.
    pub layers: usize,
    /// Feature width D.
    pub d: usize,
    /// Attention heads D_H.
    pub d_h: usize,
    /// Total query/key/value width D_K (split across heads).
    pub d_k: usize,
    /// Quadratic relation-score width D' per head.
    pub d_prime: usize,
    /// Feed-forward hidden width.
    pub d_ff: usize,
    /// Person-embedding capacity.
    pub n_max: usize,
    /// Joints per person.
    pub joints: usize,
    /// History frames.
    pub t_h: usize,
    /// Future frames.
    pub t_f: usize,
}

impl ModelDims {
    /// Message width for the relation update: joint, joint-transpose,
    /// relation, relation-transpose features concatenated.
    pub fn d_m(&self) -> usize {
        4 * self.d
    }

    /// Per-head key width F_K.
    pub fn f_k(&self) -> usize {
        self.d_k / self.d_h
    }

    pub fn joint_input_width(&self) -> usize {
        6 * self.t_h
    }

    pub fn relation_channels(&self) -> usize {
        self.t_h + 2
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.d_k.is_multiple_of(self.d_h) {
            return Err(format!("d_k {} not divisible by d_h {}", self.d_k, self.d_h));
        }
        if self.t_h < 2 {
            return Err(format!("t_h {} < 2 (velocity needs a predecessor)", self.t_h));
        }
        for (name, v) in [
            ("layers", self.layers),
            ("d", self.d),
            ("d_h", self.d_h),
            ("d_k", self.d_k),
            ("d_prime", self.d_prime),
            ("d_ff", self.d_ff),
            ("n_max", self.n_max),
            ("joints", self.joints),
            ("t_f", self.t_f),
        ] {
            if v == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        Ok(())
    }

    /// Smallest configuration used by gradient checking.
    pub fn tiny() -> Self {
        ModelDims {
            layers: 2,
            d: 8,
            d_h: 2,
            d_k: 8,
            d_prime: 8,
            d_ff: 16,
            n_max: 2,
            joints: 3,
            t_h: 4,
            t_f: 2,
        }
    }
}

// ── Leaf containers ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LinearPar<L> {
    pub w: L,
    pub b: L,
}

#[derive(Debug, Clone)]
pub struct Mlp2Par<L> {
    pub l1: LinearPar<L>,
    pub l2: LinearPar<L>,
}

#[derive(Debug, Clone)]
pub struct Mlp3Par<L> {
    pub l1: LinearPar<L>,
    pub l2: LinearPar<L>,
    pub l3: LinearPar<L>,
}

#[derive(Debug, Clone)]
pub struct LayerNormPar<L> {
    pub gamma: L,
    pub beta: L,
}

#[derive(Debug, Clone)]
pub struct EmbeddingPar<L> {
    pub person: L,
    pub joint: L,
}

/// One joint-relation fusion layer: attention projections, relation-score
/// weights, the joint feed-forward, and the two relation local updates.
#[derive(Debug, Clone)]
pub struct FusionLayerPar<L> {
    pub w_q: L,
    pub w_k: L,
    pub w_v: L,
    pub w_o: L,
    /// Linear relation-score projection, one column per head.
    pub w_l: L,
    /// Quadratic relation-score projections, head-major columns.
    pub w_q1: L,
    pub w_q2: L,
    pub ffn: Mlp2Par<L>,
    pub ln_joint: LayerNormPar<L>,
    pub lu1: Mlp2Par<L>,
    pub ln_msg: LayerNormPar<L>,
    pub lu2: Mlp2Par<L>,
    pub ln_rel: LayerNormPar<L>,
}

/// Full parameter set: encoders, positional embeddings, fusion stack,
/// and the two decoders (shared across deep supervision).
#[derive(Debug, Clone)]
pub struct ModelPar<L> {
    pub joint_enc: Mlp2Par<L>,
    pub rel_enc: LinearPar<L>,
    pub pos: EmbeddingPar<L>,
    pub fusion: Vec<FusionLayerPar<L>>,
    pub joint_dec: Mlp3Par<L>,
    pub rel_dec: LinearPar<L>,
}

// ── Tree walks ───────────────────────────────────────────────────────

macro_rules! walk_fields {
    ($self:ident, $path:ident, $f:ident; $($field:ident),+) => {
        $( $self.$field.walk(&format!(concat!("{}.", stringify!($field)), $path), $f); )+
    };
}

macro_rules! walk_fields_mut {
    ($self:ident, $path:ident, $f:ident; $($field:ident),+) => {
        $( $self.$field.walk_mut(&format!(concat!("{}.", stringify!($field)), $path), $f); )+
    };
}

macro_rules! map_fields {
    ($self:ident, $f:ident; $($field:ident),+) => {
        Self::Out { $( $field: $self.$field.map($f) ),+ }
    };
}

/// Leaf walker. Implemented directly for leaves and structurally for
/// containers; the three walks visit leaves in the same order.
pub trait ParamTree<L> {
    type Out<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> Self::Out<M>;
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L));
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L));
}

/// Marks the leaf payloads a tree can carry.
pub trait Leaf {}
impl<T: Scalar> Leaf for Tensor<T> {}
impl Leaf for crate::numerics::TensorId {}

impl<L: Leaf> ParamTree<L> for L {
    type Out<M> = M;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> M {
        f(self)
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        f(path, self);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        f(path, self);
    }
}

impl<L: Leaf> ParamTree<L> for LinearPar<L> {
    type Out<M> = LinearPar<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> LinearPar<M> {
        map_fields!(self, f; w, b)
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        walk_fields!(self, path, f; w, b);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        walk_fields_mut!(self, path, f; w, b);
    }
}

impl<L: Leaf> ParamTree<L> for Mlp2Par<L> {
    type Out<M> = Mlp2Par<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> Mlp2Par<M> {
        map_fields!(self, f; l1, l2)
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        walk_fields!(self, path, f; l1, l2);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        walk_fields_mut!(self, path, f; l1, l2);
    }
}

impl<L: Leaf> ParamTree<L> for Mlp3Par<L> {
    type Out<M> = Mlp3Par<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> Mlp3Par<M> {
        map_fields!(self, f; l1, l2, l3)
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        walk_fields!(self, path, f; l1, l2, l3);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        walk_fields_mut!(self, path, f; l1, l2, l3);
    }
}

impl<L: Leaf> ParamTree<L> for LayerNormPar<L> {
    type Out<M> = LayerNormPar<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> LayerNormPar<M> {
        map_fields!(self, f; gamma, beta)
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        walk_fields!(self, path, f; gamma, beta);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        walk_fields_mut!(self, path, f; gamma, beta);
    }
}

impl<L: Leaf> ParamTree<L> for EmbeddingPar<L> {
    type Out<M> = EmbeddingPar<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> EmbeddingPar<M> {
        map_fields!(self, f; person, joint)
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        walk_fields!(self, path, f; person, joint);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        walk_fields_mut!(self, path, f; person, joint);
    }
}

impl<L: Leaf> ParamTree<L> for FusionLayerPar<L> {
    type Out<M> = FusionLayerPar<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> FusionLayerPar<M> {
        map_fields!(self, f; w_q, w_k, w_v, w_o, w_l, w_q1, w_q2, ffn, ln_joint, lu1, ln_msg, lu2, ln_rel)
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        walk_fields!(self, path, f; w_q, w_k, w_v, w_o, w_l, w_q1, w_q2, ffn, ln_joint, lu1, ln_msg, lu2, ln_rel);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        walk_fields_mut!(self, path, f; w_q, w_k, w_v, w_o, w_l, w_q1, w_q2, ffn, ln_joint, lu1, ln_msg, lu2, ln_rel);
    }
}

impl<L: Leaf> ParamTree<L> for ModelPar<L> {
    type Out<M> = ModelPar<M>;
    fn map<M>(&self, f: &mut impl FnMut(&L) -> M) -> ModelPar<M> {
        ModelPar {
            joint_enc: self.joint_enc.map(f),
            rel_enc: self.rel_enc.map(f),
            pos: self.pos.map(f),
            fusion: self.fusion.iter().map(|l| l.map(f)).collect(),
            joint_dec: self.joint_dec.map(f),
            rel_dec: self.rel_dec.map(f),
        }
    }
    fn walk<'a>(&'a self, path: &str, f: &mut impl FnMut(&str, &'a L)) {
        self.joint_enc.walk(&format!("{path}joint_enc"), f);
        self.rel_enc.walk(&format!("{path}rel_enc"), f);
        self.pos.walk(&format!("{path}pos"), f);
        for (i, layer) in self.fusion.iter().enumerate() {
            layer.walk(&format!("{path}fusion.{i}"), f);
        }
        self.joint_dec.walk(&format!("{path}joint_dec"), f);
        self.rel_dec.walk(&format!("{path}rel_dec"), f);
    }
    fn walk_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(&str, &'a mut L)) {
        self.joint_enc.walk_mut(&format!("{path}joint_enc"), f);
        self.rel_enc.walk_mut(&format!("{path}rel_enc"), f);
        self.pos.walk_mut(&format!("{path}pos"), f);
        for (i, layer) in self.fusion.iter_mut().enumerate() {
            layer.walk_mut(&format!("{path}fusion.{i}"), f);
        }
        self.joint_dec.walk_mut(&format!("{path}joint_dec"), f);
        self.rel_dec.walk_mut(&format!("{path}rel_dec"), f);
    }
}

// ── Initialization ───────────────────────────────────────────────────

/// How to fill the parameter tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Training defaults: attention projections and embeddings
    /// Gaussian(0, 0.02); perceptron layers fan-in uniform
    /// `U(+-1/sqrt(d_in))`; biases zero; relation-score weights zero
    /// (attention starts plain and the relation pathway grows from
    /// zero); unit layer-norm gains.
    Training,
    /// Every block Gaussian with the given std (layer-norm gains centered
    /// at 1). Used by gradient checking so zero-initialized blocks still
    /// get exercised at a generic point.
    RandomAll { std: f64 },
}

impl<T: Scalar> ModelPar<Tensor<T>> {
    pub fn init(dims: &ModelDims, seed: u64, init: Init) -> Self {
        let mut rng = Rng::new(seed);
        let std = 0.02;
        let mut gauss = |shape: Vec<usize>, s: f64| -> Tensor<T> {
            Tensor::from_fn(shape, |_| T::from_f64(rng.normal_scaled(s)))
        };

        let linear = |g: &mut dyn FnMut(Vec<usize>, f64) -> Tensor<T>,
                      d_in: usize,
                      d_out: usize,
                      bias_std: f64|
         -> LinearPar<Tensor<T>> {
            LinearPar { w: g(vec![d_in, d_out], std), b: g(vec![d_out], bias_std) }
        };

        match init {
            Init::Training => {
                // Perceptron layers: fan-in uniform with zero biases
                // (signal scale preserved at depth, so training does not
                // stall growing tiny weights layer by layer).
                let mut fan_rng = Rng::new(seed ^ 0x0FAB_11ED);
                let mut fan_linear = |d_in: usize, d_out: usize| -> LinearPar<Tensor<T>> {
                    let bound = 1.0 / (d_in as f64).sqrt();
                    LinearPar {
                        w: Tensor::from_fn(vec![d_in, d_out], |_| {
                            T::from_f64(fan_rng.uniform_in(-bound, bound))
                        }),
                        b: Tensor::zeros(vec![d_out]),
                    }
                };
                let ln = |d: usize| LayerNormPar {
                    gamma: Tensor::full(vec![d], T::ONE),
                    beta: Tensor::zeros(vec![d]),
                };
                let d = dims.d;
                ModelPar {
                    joint_enc: Mlp2Par {
                        l1: fan_linear(dims.joint_input_width(), d),
                        l2: fan_linear(d, d),
                    },
                    rel_enc: fan_linear(dims.relation_channels(), d),
                    pos: EmbeddingPar {
                        person: gauss(vec![dims.n_max, d], std),
                        joint: gauss(vec![dims.joints, d], std),
                    },
                    fusion: (0..dims.layers)
                        .map(|_| FusionLayerPar {
                            w_q: gauss(vec![d, dims.d_k], std),
                            w_k: gauss(vec![d, dims.d_k], std),
                            w_v: gauss(vec![d, dims.d_k], std),
                            w_o: gauss(vec![dims.d_k, d], std),
                            w_l: Tensor::zeros(vec![d, dims.d_h]),
                            w_q1: Tensor::zeros(vec![d, dims.d_h * dims.d_prime]),
                            w_q2: Tensor::zeros(vec![d, dims.d_h * dims.d_prime]),
                            ffn: Mlp2Par {
                                l1: fan_linear(d, dims.d_ff),
                                l2: fan_linear(dims.d_ff, d),
                            },
                            ln_joint: ln(d),
                            lu1: Mlp2Par {
                                l1: fan_linear(dims.d_m(), dims.d_ff),
                                l2: fan_linear(dims.d_ff, d),
                            },
                            ln_msg: ln(dims.d_m()),
                            lu2: Mlp2Par {
                                l1: fan_linear(d, dims.d_ff),
                                l2: fan_linear(dims.d_ff, d),
                            },
                            ln_rel: ln(d),
                        })
                        .collect(),
                    joint_dec: Mlp3Par {
                        l1: fan_linear(d, d),
                        l2: fan_linear(d, d),
                        l3: fan_linear(d, (dims.t_h + dims.t_f) * 3),
                    },
                    rel_dec: fan_linear(d, dims.t_h + dims.t_f),
                }
            }
            Init::RandomAll { std: s } => {
                let mut g = |shape: Vec<usize>, _ignored: f64| gauss(shape, s);
                let mut ln_rng = Rng::new(seed ^ 0x5157_9A93);
                let mut ln = |d: usize| LayerNormPar {
                    gamma: Tensor::from_fn(vec![d], |_| {
                        T::from_f64(1.0 + ln_rng.normal_scaled(s))
                    }),
                    beta: Tensor::from_fn(vec![d], |_| T::from_f64(ln_rng.normal_scaled(s))),
                };
                let d = dims.d;
                ModelPar {
                    joint_enc: Mlp2Par {
                        l1: linear(&mut g, dims.joint_input_width(), d, s),
                        l2: linear(&mut g, d, d, s),
                    },
                    rel_enc: linear(&mut g, dims.relation_channels(), d, s),
                    pos: EmbeddingPar {
                        person: g(vec![dims.n_max, d], s),
                        joint: g(vec![dims.joints, d], s),
                    },
                    fusion: (0..dims.layers)
                        .map(|_| FusionLayerPar {
                            w_q: g(vec![d, dims.d_k], s),
                            w_k: g(vec![d, dims.d_k], s),
                            w_v: g(vec![d, dims.d_k], s),
                            w_o: g(vec![dims.d_k, d], s),
                            w_l: g(vec![d, dims.d_h], s),
                            w_q1: g(vec![d, dims.d_h * dims.d_prime], s),
                            w_q2: g(vec![d, dims.d_h * dims.d_prime], s),
                            ffn: Mlp2Par {
                                l1: linear(&mut g, d, dims.d_ff, s),
                                l2: linear(&mut g, dims.d_ff, d, s),
                            },
                            ln_joint: ln(d),
                            lu1: Mlp2Par {
                                l1: linear(&mut g, dims.d_m(), dims.d_ff, s),
                                l2: linear(&mut g, dims.d_ff, d, s),
                            },
                            ln_msg: ln(dims.d_m()),
                            lu2: Mlp2Par {
                                l1: linear(&mut g, d, dims.d_ff, s),
                                l2: linear(&mut g, dims.d_ff, d, s),
                            },
                            ln_rel: ln(d),
                        })
                        .collect(),
                    joint_dec: Mlp3Par {
                        l1: linear(&mut g, d, d, s),
                        l2: linear(&mut g, d, d, s),
                        l3: linear(&mut g, d, (dims.t_h + dims.t_f) * 3, s),
                    },
                    rel_dec: linear(&mut g, d, dims.t_h + dims.t_f, s),
                }
            }
        }
    }

    /// (name, shape, data) triples in walk order.
    pub fn named_blocks(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out = Vec::new();
        self.walk("", &mut |name: &str, t: &Tensor<T>| {
            out.push((name.to_string(), t.shape().to_vec(), t.data()));
        });
        out
    }

    pub fn total_params(&self) -> usize {
        let mut n = 0;
        self.walk("", &mut |_, t: &Tensor<T>| n += t.numel());
        n
    }
}

/// Gradient-check view: flat f64 blocks in walk order.
impl BlockAccess for ModelPar<Tensor<f64>> {
    fn blocks(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.walk("", &mut |name: &str, t: &Tensor<f64>| {
            out.push((name.to_string(), t.numel()));
        });
        out
    }

    fn get(&self, block: usize, idx: usize) -> f64 {
        let mut i = 0;
        let mut found = f64::NAN;
        self.walk("", &mut |_, t: &Tensor<f64>| {
            if i == block {
                found = t.data()[idx];
            }
            i += 1;
        });
        found
    }

    fn set(&mut self, block: usize, idx: usize, value: f64) {
        let mut i = 0;
        self.walk_mut("", &mut |_, t: &mut Tensor<f64>| {
            if i == block {
                t.data_mut()[idx] = value;
            }
            i += 1;
        });
    }
}
