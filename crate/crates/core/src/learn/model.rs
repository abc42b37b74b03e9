//! Dense rectifier network with a shared trunk and per-criterion linear heads.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weight: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    /// Uniform in `+-1 / sqrt(fan_in)`.
    pub fn init(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let mut layer = Self::zeros(inputs, outputs);
        for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
            *v = rng.random_range(-bound..bound);
        }
        layer
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>());
        }
    }

    /// Accumulates parameter gradients into `grad` (laid out like the
    /// parameters) and returns the input cotangent.
    fn backward(&self, x: &[f64], g: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let (gw, gb) = grad.split_at_mut(self.weight.len());
        let mut gx = vec![0.0; self.inputs];
        for o in 0..self.outputs {
            let go = g[o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let row = &self.weight[o * self.inputs..(o + 1) * self.inputs];
            let grow = &mut gw[o * self.inputs..(o + 1) * self.inputs];
            for i in 0..self.inputs {
                grow[i] += go * x[i];
                gx[i] += go * row[i];
            }
        }
        gx
    }

    fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// How the network is applied to a feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// One pass; the heads' outputs are concatenated (row-major `heads x head_out`).
    Joint,
    /// The input holds `items` equal-length chunks; every head has one output
    /// and scores each chunk. Outputs are head-major (`heads x items`).
    ItemWise { items: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub heads: usize,
    pub head_out: usize,
    pub layout: Layout,
}

impl PredictorSpec {
    /// `depth` hidden layers starting at twice the input width and halving.
    pub fn halving(input: usize, depth: usize, heads: usize, head_out: usize) -> Self {
        let mut hidden = Vec::with_capacity(depth);
        let mut width = 2 * input;
        for _ in 0..depth {
            hidden.push(width.max(1));
            width /= 2;
        }
        Self {
            input,
            hidden,
            heads,
            head_out,
            layout: Layout::Joint,
        }
    }

    pub fn item_wise(item_features: usize, depth: usize, items: usize) -> Self {
        Self::item_wise_heads(item_features, depth, items, 1)
    }

    /// Item-wise network with one scalar head per output row.
    pub fn item_wise_heads(item_features: usize, depth: usize, items: usize, heads: usize) -> Self {
        Self {
            layout: Layout::ItemWise { items },
            ..Self::halving(item_features, depth, heads, 1)
        }
    }

    pub fn output_len(&self) -> usize {
        match self.layout {
            Layout::Joint => self.heads * self.head_out,
            Layout::ItemWise { items } => items * self.heads,
        }
    }

    /// Position in the output vector of output `k` of head `h` in pass `p`.
    fn out_index(&self, p: usize, h: usize, k: usize) -> usize {
        match self.layout {
            Layout::Joint => (h * self.head_out) + k,
            Layout::ItemWise { items } => h * items + p,
        }
    }

    pub fn feature_len(&self) -> usize {
        match self.layout {
            Layout::Joint => self.input,
            Layout::ItemWise { items } => items * self.input,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub spec: PredictorSpec,
    pub trunk: Vec<Dense>,
    pub heads: Vec<Dense>,
    pub seed: u64,
}

/// Activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Per pass (one, or one per item): trunk inputs and the final trunk output.
    passes: Vec<Vec<Vec<f64>>>,
}

impl Predictor {
    pub fn new(spec: PredictorSpec, seed: u64) -> Result<Self> {
        if spec.input == 0 || spec.heads == 0 || spec.head_out == 0 {
            return Err(Error::InvalidArgument(format!("degenerate network {spec:?}")));
        }
        if let Layout::ItemWise { items } = spec.layout {
            if items == 0 || spec.head_out != 1 {
                return Err(Error::InvalidArgument(
                    "item-wise network heads have one output".into(),
                ));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut trunk = Vec::new();
        let mut width = spec.input;
        for &h in &spec.hidden {
            trunk.push(Dense::init(width, h, &mut rng));
            width = h;
        }
        let heads = (0..spec.heads)
            .map(|_| Dense::init(width, spec.head_out, &mut rng))
            .collect();
        Ok(Self {
            spec,
            trunk,
            heads,
            seed,
        })
    }

    pub fn zeroed(mut self) -> Self {
        for layer in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            layer.weight.iter_mut().for_each(|v| *v = 0.0);
            layer.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        self
    }

    pub fn param_count(&self) -> usize {
        self.trunk
            .iter()
            .chain(&self.heads)
            .map(Dense::param_count)
            .sum()
    }

    /// Flat copy of all parameters: trunk layers then heads, each weight then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in self.trunk.iter().chain(&self.heads) {
            out.extend_from_slice(&layer.weight);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        check_len(self.param_count(), flat.len())?;
        let mut k = 0;
        for layer in self.trunk.iter_mut().chain(self.heads.iter_mut()) {
            for v in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *v = flat[k];
                k += 1;
            }
        }
        Ok(())
    }

    fn trunk_forward(&self, z: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![z.to_vec()];
        let mut buf = Vec::new();
        for layer in &self.trunk {
            layer.forward(acts.last().expect("input present"), &mut buf);
            acts.push(buf.iter().map(|v| v.max(0.0)).collect());
        }
        acts
    }

    fn check_input(&self, z: &[f64]) -> Result<()> {
        check_len(self.spec.feature_len(), z.len())?;
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("features"));
        }
        Ok(())
    }

    pub fn forward(&self, z: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(z)?;
        let chunks: Vec<&[f64]> = match self.spec.layout {
            Layout::Joint => vec![z],
            Layout::ItemWise { .. } => z.chunks(self.spec.input).collect(),
        };
        let mut out = vec![0.0; self.spec.output_len()];
        let mut passes = Vec::with_capacity(chunks.len());
        let mut buf = Vec::new();
        for (p, chunk) in chunks.into_iter().enumerate() {
            let acts = self.trunk_forward(chunk);
            let last = acts.last().expect("input present");
            for (h, head) in self.heads.iter().enumerate() {
                head.forward(last, &mut buf);
                for (k, v) in buf.iter().enumerate() {
                    out[self.spec.out_index(p, h, k)] = *v;
                }
            }
            passes.push(acts);
        }
        Ok((out, ForwardCache { passes }))
    }

    pub fn predict(&self, z: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(z)?.0)
    }

    /// Gradient of `g . output` w.r.t. the flat parameters.
    pub fn backward(&self, cache: &ForwardCache, g: &[f64]) -> Result<Vec<f64>> {
        check_len(self.spec.output_len(), g.len())?;
        let mut grad = vec![0.0; self.param_count()];
        let trunk_len: usize = self.trunk.iter().map(Dense::param_count).sum();
        for (p, acts) in cache.passes.iter().enumerate() {
            let last = acts.last().expect("input present");
            let mut g_last = vec![0.0; last.len()];
            let mut offset = trunk_len;
            for (h, head) in self.heads.iter().enumerate() {
                let gh: Vec<f64> = (0..self.spec.head_out)
                    .map(|k| g[self.spec.out_index(p, h, k)])
                    .collect();
                let len = head.param_count();
                let gx = head.backward(last, &gh, &mut grad[offset..offset + len]);
                for (a, b) in g_last.iter_mut().zip(gx) {
                    *a += b;
                }
                offset += len;
            }
            let mut gcur = g_last;
            let mut end = trunk_len;
            for (l, layer) in self.trunk.iter().enumerate().rev() {
                // rectifier derivative at the layer output
                for (gv, a) in gcur.iter_mut().zip(&acts[l + 1]) {
                    if *a <= 0.0 {
                        *gv = 0.0;
                    }
                }
                let len = layer.param_count();
                gcur = layer.backward(&acts[l], &gcur, &mut grad[end - len..end]);
                end -= len;
            }
        }
        Ok(grad)
    }

    /// Plain-text checkpoint: a header of `key value` lines, then one line of
    /// space-separated values per weight matrix row and per bias vector, in
    /// parameter order.
    pub fn to_checkpoint(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "owa-pto-predictor 1");
        let _ = writeln!(s, "input {}", self.spec.input);
        let hidden: Vec<String> = self.spec.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "hidden {}", hidden.join(" "));
        let _ = writeln!(s, "heads {} {}", self.spec.heads, self.spec.head_out);
        match self.spec.layout {
            Layout::Joint => {
                let _ = writeln!(s, "layout joint");
            }
            Layout::ItemWise { items } => {
                let _ = writeln!(s, "layout items {items}");
            }
        }
        let _ = writeln!(s, "activation relu");
        let _ = writeln!(s, "seed {}", self.seed);
        let _ = writeln!(s, "params");
        for layer in self.trunk.iter().chain(&self.heads) {
            for row in layer.weight.chunks(layer.inputs) {
                let _ = writeln!(s, "{}", join_floats(row));
            }
            let _ = writeln!(s, "{}", join_floats(&layer.bias));
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Parse(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some("owa-pto-predictor 1") {
            return Err(bad("missing header"));
        }
        let mut field = |key: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(bad(&format!("expected `{key}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let num = |v: &str| v.parse::<usize>().map_err(|_| bad(&format!("bad integer `{v}`")));
        let input = num(field("input")?.first().ok_or_else(|| bad("input"))?)?;
        let hidden = field("hidden")?
            .iter()
            .map(|v| num(v))
            .collect::<Result<Vec<_>>>()?;
        let heads_f = field("heads")?;
        if heads_f.len() != 2 {
            return Err(bad("heads"));
        }
        let (heads, head_out) = (num(&heads_f[0])?, num(&heads_f[1])?);
        let layout_f = field("layout")?;
        let layout = match layout_f.as_slice() {
            [j] if j == "joint" => Layout::Joint,
            [i, n] if i == "items" => Layout::ItemWise { items: num(n)? },
            _ => return Err(bad("layout")),
        };
        if field("activation")? != ["relu"] {
            return Err(bad("unsupported activation"));
        }
        let seed = field("seed")?
            .first()
            .ok_or_else(|| bad("seed"))?
            .parse::<u64>()
            .map_err(|_| bad("seed"))?;
        field("params")?;
        let spec = PredictorSpec {
            input,
            hidden,
            heads,
            head_out,
            layout,
        };
        let mut model = Predictor::new(spec, seed)?;
        let mut flat = Vec::with_capacity(model.param_count());
        for line in lines {
            for v in line.split_whitespace() {
                flat.push(v.parse::<f64>().map_err(|_| bad(&format!("bad value `{v}`")))?);
            }
        }
        model.set_params(&flat)?;
        Ok(model)
    }
}

fn join_floats(v: &[f64]) -> String {
    // `{:?}` prints the shortest representation that round-trips
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ")
}
