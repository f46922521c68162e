use rand::Rng;

use super::{Graph, NnError, ParameterSet, Tensor, Var};

/// Bound on the uniform init of the output layer.
pub const FINAL_LAYER_INIT: f64 = 3e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum OutputActivation {
    Identity,
    /// `mid + half·tanh(z)` per output, mapping onto `[low, high]`.
    TanhScaled { low: Vec<f64>, high: Vec<f64> },
}

/// Architecture of a fully connected network.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub output_activation: OutputActivation,
    pub use_layer_norm: bool,
}

impl MlpSpec {
    /// Three hidden layers of 256 with layer norm and ReLU, linear head.
    pub fn critic(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![256, 256, 256],
            output_dim: 1,
            hidden_activation: Activation::Relu,
            output_activation: OutputActivation::Identity,
            use_layer_norm: true,
        }
    }

    /// Same trunk as [`critic`](Self::critic) with a bounded tanh head.
    pub fn actor(input_dim: usize, low: Vec<f64>, high: Vec<f64>) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![256, 256, 256],
            output_dim: low.len(),
            hidden_activation: Activation::Relu,
            output_activation: OutputActivation::TanhScaled { low, high },
            use_layer_norm: true,
        }
    }

    pub fn with_hidden(mut self, hidden_dims: Vec<usize>) -> Self {
        self.hidden_dims = hidden_dims;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(NnError::InvalidArgument(format!(
                "all layer widths must be ≥ 1: in {}, hidden {:?}, out {}",
                self.input_dim, self.hidden_dims, self.output_dim
            )));
        }
        if let OutputActivation::TanhScaled { low, high } = &self.output_activation {
            if low.len() != self.output_dim || high.len() != self.output_dim {
                return Err(NnError::InvalidArgument(
                    "action bounds must match the output width".into(),
                ));
            }
            if low.iter().zip(high).any(|(l, h)| !(l < h)) {
                return Err(NnError::InvalidArgument("action bounds need low < high".into()));
            }
        }
        Ok(())
    }

    /// Expected `(name, shape)` of every parameter, in storage order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &h) in self.hidden_dims.iter().enumerate() {
            out.push((format!("l{i}.weight"), vec![fan_in, h]));
            out.push((format!("l{i}.bias"), vec![h]));
            if self.use_layer_norm {
                out.push((format!("l{i}.ln_gain"), vec![h]));
                out.push((format!("l{i}.ln_offset"), vec![h]));
            }
            fan_in = h;
        }
        out.push(("out.weight".into(), vec![fan_in, self.output_dim]));
        out.push(("out.bias".into(), vec![self.output_dim]));
        out
    }

    /// Hidden layers uniform in ±1/√fan_in, output layer in ±3e-3, layer-norm
    /// gains 1 and offsets 0.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParameterSet, NnError> {
        self.validate()?;
        let mut params = ParameterSet::new();
        for (name, shape) in self.layout() {
            let n: usize = shape.iter().product();
            let data = if name.ends_with("ln_gain") {
                vec![1.0; n]
            } else if name.ends_with("ln_offset") {
                vec![0.0; n]
            } else {
                let bound = if name.starts_with("out.") {
                    FINAL_LAYER_INIT
                } else {
                    let fan_in = self.fan_in_of(&name);
                    1.0 / (fan_in as f64).sqrt()
                };
                (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
            };
            params.insert(name, Tensor::new(shape, data)?)?;
        }
        Ok(params)
    }

    fn fan_in_of(&self, name: &str) -> usize {
        let idx: usize = name[1..name.find('.').unwrap_or(name.len())].parse().unwrap_or(0);
        if idx == 0 {
            self.input_dim
        } else {
            self.hidden_dims[idx - 1]
        }
    }

    pub fn check_params(&self, params: &ParameterSet) -> Result<(), NnError> {
        let layout = self.layout();
        if layout.len() != params.len() {
            return Err(NnError::ShapeMismatch(format!(
                "network expects {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in layout.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "expected `{name}` {shape:?}, found `{pname}` {:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

/// A network's parameters registered on a [`Graph`], reusable across inputs.
pub struct BoundMlp {
    layers: Vec<(Var, Var, Option<(Var, Var)>)>,
    out: (Var, Var),
    hidden_activation: Activation,
    head: Option<(Vec<f64>, Vec<f64>)>,
    input_dim: usize,
}

/// Registers `params` on `g`. With `prefix = Some(p)` each tensor is trainable
/// and its gradient is reported as `p` + name; with `None` they are constants.
pub fn bind(
    spec: &MlpSpec,
    params: &ParameterSet,
    g: &mut Graph,
    prefix: Option<&str>,
) -> Result<BoundMlp, NnError> {
    spec.validate()?;
    spec.check_params(params)?;
    let mut reg = |name: &str| -> Result<Var, NnError> {
        let t = params.require(name)?;
        match prefix {
            Some(p) => g.param(&format!("{p}{name}"), t),
            None => g.constant(t.clone()),
        }
    };
    let mut layers = Vec::with_capacity(spec.hidden_dims.len());
    for i in 0..spec.hidden_dims.len() {
        let w = reg(&format!("l{i}.weight"))?;
        let b = reg(&format!("l{i}.bias"))?;
        let ln = if spec.use_layer_norm {
            Some((reg(&format!("l{i}.ln_gain"))?, reg(&format!("l{i}.ln_offset"))?))
        } else {
            None
        };
        layers.push((w, b, ln));
    }
    let out = (reg("out.weight")?, reg("out.bias")?);
    let head = match &spec.output_activation {
        OutputActivation::Identity => None,
        OutputActivation::TanhScaled { low, high } => {
            let half: Vec<f64> = low.iter().zip(high).map(|(l, h)| 0.5 * (h - l)).collect();
            let mid: Vec<f64> = low.iter().zip(high).map(|(l, h)| 0.5 * (h + l)).collect();
            Some((half, mid))
        }
    };
    Ok(BoundMlp {
        layers,
        out,
        hidden_activation: spec.hidden_activation,
        head,
        input_dim: spec.input_dim,
    })
}

impl BoundMlp {
    /// Affine → layer norm → activation per hidden layer, then the head.
    pub fn apply(&self, g: &mut Graph, input: Var) -> Result<Var, NnError> {
        let cols = g.value(input).cols();
        if cols != self.input_dim || g.value(input).shape().len() != 2 {
            return Err(NnError::ShapeMismatch(format!(
                "network input must be rows × {}, got {:?}",
                self.input_dim,
                g.value(input).shape()
            )));
        }
        let mut h = input;
        for &(w, b, ln) in &self.layers {
            h = g.matmul(h, w)?;
            h = g.add_row(h, b)?;
            if let Some((gain, offset)) = ln {
                h = g.layer_norm(h, gain, offset)?;
            }
            if self.hidden_activation == Activation::Relu {
                h = g.relu(h)?;
            }
        }
        h = g.matmul(h, self.out.0)?;
        h = g.add_row(h, self.out.1)?;
        if let Some((half, mid)) = &self.head {
            h = g.tanh(h)?;
            h = g.affine_cols(h, half, mid)?;
        }
        Ok(h)
    }
}

/// Pure evaluation; a rank-1 input is treated as a single row.
pub fn forward(spec: &MlpSpec, params: &ParameterSet, input: &Tensor) -> Result<Tensor, NnError> {
    let input = if input.shape().len() == 1 {
        Tensor::new(vec![1, input.len()], input.data().to_vec())?
    } else if input.shape().len() == 2 {
        input.clone()
    } else {
        return Err(NnError::ShapeMismatch(format!(
            "network input must be rank 1 or 2, got {:?}",
            input.shape()
        )));
    };
    let mut g = Graph::new();
    let net = bind(spec, params, &mut g, None)?;
    let x = g.constant(input)?;
    let y = net.apply(&mut g, x)?;
    Ok(g.value(y).clone())
}

/// Specification plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: ParameterSet,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self, NnError> {
        let params = spec.init_params(rng)?;
        Ok(Self { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: ParameterSet) -> Result<Self, NnError> {
        spec.validate()?;
        spec.check_params(&params)?;
        Ok(Self { spec, params })
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor, NnError> {
        forward(&self.spec, &self.params, input)
    }

    pub fn bind(&self, g: &mut Graph, prefix: Option<&str>) -> Result<BoundMlp, NnError> {
        bind(&self.spec, &self.params, g, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn linear_spec(n: usize) -> MlpSpec {
        MlpSpec {
            input_dim: n,
            hidden_dims: vec![],
            output_dim: n,
            hidden_activation: Activation::Identity,
            output_activation: OutputActivation::Identity,
            use_layer_norm: false,
        }
    }

    #[test]
    fn identity_network() {
        let spec = linear_spec(3);
        let mut p = ParameterSet::new();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        p.insert("out.weight", Tensor::new(vec![3, 3], eye).unwrap()).unwrap();
        p.insert("out.bias", Tensor::zeros(&[3])).unwrap();
        let y = forward(&spec, &p, &Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::critic(4).with_hidden(vec![5, 5]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = spec.init_params(&mut rng).unwrap();
        let zero = params.zeros_like();
        let x = Tensor::from_rows(&[[1.0, -2.0, 3.0, 0.5], [9.0, 9.0, -9.0, 0.0]]).unwrap();
        let y = forward(&spec, &zero, &x).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_width_is_checked() {
        let spec = MlpSpec::critic(4).with_hidden(vec![3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = spec.init_params(&mut rng).unwrap();
        let x = Tensor::zeros(&[2, 5]);
        assert!(matches!(forward(&spec, &params, &x), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn param_shapes_are_checked() {
        let spec = MlpSpec::critic(4).with_hidden(vec![3]);
        let other = MlpSpec::critic(4).with_hidden(vec![2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = other.init_params(&mut rng).unwrap();
        assert!(forward(&spec, &params, &Tensor::zeros(&[1, 4])).is_err());
    }

    #[test]
    fn init_ranges() {
        let spec = MlpSpec::actor(3, vec![-2.0], vec![2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = spec.init_params(&mut rng).unwrap();
        let b0 = 1.0 / 3f64.sqrt();
        assert!(p.get("l0.weight").unwrap().data().iter().all(|v| v.abs() <= b0));
        let b1 = 1.0 / 256f64.sqrt();
        assert!(p.get("l2.weight").unwrap().data().iter().all(|v| v.abs() <= b1));
        assert!(p.get("out.weight").unwrap().data().iter().all(|v| v.abs() <= FINAL_LAYER_INIT));
        assert!(p.get("l1.ln_gain").unwrap().data().iter().all(|&v| v == 1.0));
        assert_eq!(spec.hidden_dims, vec![256, 256, 256]);
        assert!(spec.use_layer_norm);
    }

    #[test]
    fn actor_head_respects_bounds() {
        let spec = MlpSpec::actor(2, vec![-1.0, 0.0], vec![3.0, 1.0]).with_hidden(vec![8]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = spec.init_params(&mut rng).unwrap();
        for (_, t) in p.iter_mut() {
            for v in t.data_mut() {
                *v *= 50.0;
            }
        }
        let x = Tensor::from_rows(&[[10.0, -10.0], [-3.0, 7.0], [0.0, 0.0]]).unwrap();
        let y = forward(&spec, &p, &x).unwrap();
        for r in 0..3 {
            let row = y.row(r);
            assert!((-1.0..=3.0).contains(&row[0]));
            assert!((0.0..=1.0).contains(&row[1]));
        }
    }

    #[test]
    fn zero_width_rejected() {
        let mut spec = MlpSpec::critic(3);
        spec.hidden_dims = vec![4, 0];
        assert!(spec.validate().is_err());
    }
}
