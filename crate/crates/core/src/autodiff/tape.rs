use super::kernels;
use super::{ParamId, ParamStore, Tensor};
use crate::kspace::{fft2c_inplace, ifft2c_inplace};
use crate::{Complex64, Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Tensor),
    ScaleBy { scalar: Var, x: Var },
    Conv2d { input: Var, weight: Var, bias: Option<Var> },
    Relu(Var),
    LeakyRelu(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    AvgPool2(Var),
    Upsample2(Var),
    Dwt(Var),
    Idwt(Var),
    Mean(Var),
    Sum(Var),
    Charbonnier(Var, f64),
    PowScalar(Var, f64),
    FilterValid(Var, Tensor),
    Fft2c(Var),
    Ifft2c(Var),
    CMul(Var, Var),
    CMulConj(Var, Var),
    CoilSum(Var),
    CAbs(Var),
    CoilNormalize(Var, Vec<bool>),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// A dynamic computation graph recorded in topological order.
///
/// Every primitive appends one node; [`Tape::backward`] walks the nodes in
/// exact reverse order, accumulating gradients where a node is used more than
/// once. Build a fresh tape for each forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every recorded node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

fn acc(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Unpacks interleaved (re, im) channels into complex planes.
fn to_complex(t: &Tensor) -> Vec<Complex64> {
    let (n, c2, h, w) = t.dims4().expect("checked by caller");
    let plane = h * w;
    let d = t.data();
    let mut out = Vec::with_capacity(n * c2 / 2 * plane);
    for p in 0..n * c2 / 2 {
        let (re, im) = (&d[2 * p * plane..(2 * p + 1) * plane], &d[(2 * p + 1) * plane..(2 * p + 2) * plane]);
        out.extend(re.iter().zip(im).map(|(&r, &i)| Complex64::new(r, i)));
    }
    out
}

fn from_complex(z: &[Complex64], shape: Vec<usize>) -> Tensor {
    let plane = shape[2] * shape[3];
    let mut data = vec![0.0; z.len() * 2];
    for (p, chunk) in z.chunks(plane).enumerate() {
        for (k, v) in chunk.iter().enumerate() {
            data[2 * p * plane + k] = v.re;
            data[(2 * p + 1) * plane + k] = v.im;
        }
    }
    Tensor::new(shape, data).expect("complex shape")
}

fn complex_fft(t: &Tensor, inverse: bool) -> Tensor {
    let (_, _, h, w) = t.dims4().expect("checked by caller");
    let mut z = to_complex(t);
    for plane in z.chunks_mut(h * w) {
        if inverse {
            ifft2c_inplace(plane, h, w);
        } else {
            fft2c_inplace(plane, h, w);
        }
    }
    from_complex(&z, t.shape().to_vec())
}

/// Complex channel counts of a broadcasting complex product.
fn broadcast_channels(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    let (na, ca, ha, wa) = a.dims4()?;
    let (nb, cb, hb, wb) = b.dims4()?;
    if na != nb || ha != hb || wa != wb || ca % 2 != 0 || cb % 2 != 0 {
        return Err(Error::shape(format!("complex product of {:?} and {:?}", a.shape(), b.shape())));
    }
    let (ka, kb) = (ca / 2, cb / 2);
    if ka != kb && ka != 1 && kb != 1 {
        return Err(Error::shape(format!("cannot broadcast {ka} and {kb} complex channels")));
    }
    Ok((ka, kb, ka.max(kb)))
}

/// `out = f(a, b)` per complex channel with broadcasting; `conj_a` conjugates `a`.
fn complex_product(a: &Tensor, b: &Tensor, conj_a: bool) -> Tensor {
    let (ka, kb, k) = broadcast_channels(a, b).expect("checked by caller");
    let (n, _, h, w) = a.dims4().expect("checked by caller");
    let (za, zb) = (to_complex(a), to_complex(b));
    let plane = h * w;
    let mut out = vec![Complex64::new(0.0, 0.0); n * k * plane];
    for bi in 0..n {
        for c in 0..k {
            let pa = &za[(bi * ka + if ka == 1 { 0 } else { c }) * plane..][..plane];
            let pb = &zb[(bi * kb + if kb == 1 { 0 } else { c }) * plane..][..plane];
            let dst = &mut out[(bi * k + c) * plane..][..plane];
            for ((o, x), y) in dst.iter_mut().zip(pa).zip(pb) {
                *o = if conj_a { x.conj() * y } else { x * y };
            }
        }
    }
    from_complex(&out, vec![n, 2 * k, h, w])
}

/// Sums complex channels of `full` (with `k` channels) down to `target` channels (1 or `k`).
fn reduce_broadcast(full: Vec<Complex64>, n: usize, k: usize, target: usize, plane: usize) -> Vec<Complex64> {
    if target == k {
        return full;
    }
    let mut out = vec![Complex64::new(0.0, 0.0); n * plane];
    for bi in 0..n {
        for c in 0..k {
            for (o, v) in out[bi * plane..(bi + 1) * plane].iter_mut().zip(&full[(bi * k + c) * plane..][..plane]) {
                *o += v;
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// A differentiable input that is not a parameter.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Alias of [`Tape::leaf`] for values that are never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id))
    }

    /// Parameters read onto this tape, in first-use order.
    pub fn parameters(&self) -> Vec<(Var, ParamId)> {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((Var(i), id)),
                _ => None,
            })
            .collect()
    }

    /// Whether any convolution consumes a k-space tensor (an `fft2c` output,
    /// possibly masked, sliced or concatenated).
    pub fn has_kspace_convolution(&self) -> bool {
        let mut kspace = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            kspace[i] = match &node.op {
                Op::Fft2c(_) => true,
                Op::MulConst(a, _) | Op::Scale(a, _) | Op::Reshape(a) | Op::Slice { x: a, .. } => kspace[a.0],
                Op::Add(a, b) | Op::Sub(a, b) => kspace[a.0] || kspace[b.0],
                Op::Concat(vs) => vs.iter().any(|v| kspace[v.0]),
                Op::Conv2d { input, .. } if kspace[input.0] => return true,
                _ => false,
            };
        }
        false
    }

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, what)?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a))
    }

    /// Elementwise product with a fixed tensor (masks, windows).
    pub fn mul_const(&mut self, a: Var, c: &Tensor) -> Result<Var> {
        let va = self.value(a);
        same_shape(va, c, "mul_const")?;
        let data = va.data().iter().zip(c.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MulConst(a, c.clone())))
    }

    /// `scalar * x` where `scalar` is a one-element node.
    pub fn scale_by(&mut self, scalar: Var, x: Var) -> Result<Var> {
        if self.value(scalar).len() != 1 {
            return Err(Error::shape("scale_by expects a one-element scalar"));
        }
        let s = self.value(scalar).item();
        let value = self.value(x).map(|v| s * v);
        Ok(self.push(value, Op::ScaleBy { scalar, x }))
    }

    /// Same-padded stride-1 convolution, `input` NCHW and `weight` OIHW.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let (_, c_in, _, _) = self.value(input).dims4()?;
        let (c_out, wc_in, kh, kw) = self.value(weight).dims4()?;
        if c_in != wc_in {
            return Err(Error::shape(format!("conv2d: input has {c_in} channels, weight expects {wc_in}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(format!("conv2d: kernel {kh}x{kw} must be odd")));
        }
        if let Some(b) = bias {
            if self.value(b).shape() != [c_out] {
                return Err(Error::shape(format!("conv2d: bias shape {:?}, expected [{c_out}]", self.value(b).shape())));
            }
        }
        let value = kernels::conv2d_forward(self.value(input), self.value(weight), bias.map(|b| self.value(b)));
        Ok(self.push(value, Op::Conv2d { input, weight, bias }))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(value, Op::LeakyRelu(a, slope))
    }

    /// Concatenation along the channel axis of NCHW tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::shape("concat of nothing"));
        }
        let (n, _, h, w) = self.value(parts[0]).dims4()?;
        let mut total = 0;
        for &p in parts {
            let (pn, pc, ph, pw) = self.value(p).dims4()?;
            if (pn, ph, pw) != (n, h, w) {
                return Err(Error::shape(format!("concat: {:?} vs {:?}", self.value(p).shape(), self.value(parts[0]).shape())));
            }
            total += pc;
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * total * plane);
        for b in 0..n {
            for &p in parts {
                let v = self.value(p);
                let c = v.shape()[1];
                data.extend_from_slice(&v.data()[b * c * plane..(b + 1) * c * plane]);
            }
        }
        let value = Tensor::new(vec![n, total, h, w], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec())))
    }

    /// Channels `start..start + len`.
    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if start + len > c || len == 0 {
            return Err(Error::shape(format!("slice {start}..{} of {c} channels", start + len)));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            data.extend_from_slice(&src[(b * c + start) * plane..(b * c + start + len) * plane]);
        }
        let value = Tensor::new(vec![n, len, h, w], data)?;
        Ok(self.push(value, Op::Slice { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    fn even_spatial(&self, x: Var, what: &str) -> Result<()> {
        let (_, _, h, w) = self.value(x).dims4()?;
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!("{what}: spatial size {h}x{w} must be even")));
        }
        Ok(())
    }

    pub fn avgpool2(&mut self, x: Var) -> Result<Var> {
        self.even_spatial(x, "avgpool2")?;
        let value = kernels::avgpool2(self.value(x));
        Ok(self.push(value, Op::AvgPool2(x)))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        self.value(x).dims4()?;
        let value = kernels::upsample2(self.value(x));
        Ok(self.push(value, Op::Upsample2(x)))
    }

    /// One-level Haar analysis, `C` channels to `4C` at half resolution.
    pub fn dwt(&mut self, x: Var) -> Result<Var> {
        self.even_spatial(x, "dwt")?;
        let value = kernels::dwt_layer(self.value(x));
        Ok(self.push(value, Op::Dwt(x)))
    }

    pub fn idwt(&mut self, x: Var) -> Result<Var> {
        let (_, c, _, _) = self.value(x).dims4()?;
        if c % 4 != 0 {
            return Err(Error::shape(format!("idwt: {c} channels is not a multiple of 4")));
        }
        let value = kernels::idwt_layer(self.value(x));
        Ok(self.push(value, Op::Idwt(x)))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let value = Tensor::scalar(v.sum() / v.len() as f64);
        self.push(value, Op::Mean(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Smooth absolute value `sqrt(x^2 + eps^2) - eps`.
    pub fn charbonnier(&mut self, x: Var, eps: f64) -> Var {
        let value = self.value(x).map(|v| (v * v + eps * eps).sqrt() - eps);
        self.push(value, Op::Charbonnier(x, eps))
    }

    /// `max(x, 0)^p` elementwise.
    pub fn pow_scalar(&mut self, x: Var, p: f64) -> Var {
        let value = self.value(x).map(|v| if v > 0.0 { v.powf(p) } else { 0.0 });
        self.push(value, Op::PowScalar(x, p))
    }

    /// Valid-mode correlation of each plane with a fixed 2D kernel.
    pub fn filter_valid(&mut self, x: Var, kernel: &Tensor) -> Result<Var> {
        let (_, _, h, w) = self.value(x).dims4()?;
        if kernel.shape().len() != 2 || kernel.shape()[0] > h || kernel.shape()[1] > w {
            return Err(Error::shape(format!("filter {:?} on a {h}x{w} image", kernel.shape())));
        }
        let value = kernels::filter_valid(self.value(x), kernel);
        Ok(self.push(value, Op::FilterValid(x, kernel.clone())))
    }

    fn complex_channels(&self, x: Var, what: &str) -> Result<()> {
        let (_, c, _, _) = self.value(x).dims4()?;
        if c % 2 != 0 {
            return Err(Error::shape(format!("{what}: {c} channels cannot hold (re, im) pairs")));
        }
        Ok(())
    }

    /// Centered orthonormal FFT of every complex channel pair.
    pub fn fft2c(&mut self, x: Var) -> Result<Var> {
        self.complex_channels(x, "fft2c")?;
        let value = complex_fft(self.value(x), false);
        Ok(self.push(value, Op::Fft2c(x)))
    }

    pub fn ifft2c(&mut self, x: Var) -> Result<Var> {
        self.complex_channels(x, "ifft2c")?;
        let value = complex_fft(self.value(x), true);
        Ok(self.push(value, Op::Ifft2c(x)))
    }

    /// Complex product with single-channel broadcasting.
    pub fn cmul(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_channels(self.value(a), self.value(b))?;
        let value = complex_product(self.value(a), self.value(b), false);
        Ok(self.push(value, Op::CMul(a, b)))
    }

    /// `conj(a) * b` with single-channel broadcasting.
    pub fn cmul_conj(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_channels(self.value(a), self.value(b))?;
        let value = complex_product(self.value(a), self.value(b), true);
        Ok(self.push(value, Op::CMulConj(a, b)))
    }

    /// Sums complex channels in order, `[N, 2L, H, W]` to `[N, 2, H, W]`.
    pub fn coil_sum(&mut self, x: Var) -> Result<Var> {
        self.complex_channels(x, "coil_sum")?;
        let (n, c2, h, w) = self.value(x).dims4()?;
        let z = to_complex(self.value(x));
        let plane = h * w;
        let k = c2 / 2;
        let mut out = vec![Complex64::new(0.0, 0.0); n * plane];
        for b in 0..n {
            for c in 0..k {
                for (o, v) in out[b * plane..(b + 1) * plane].iter_mut().zip(&z[(b * k + c) * plane..][..plane]) {
                    *o += v;
                }
            }
        }
        let value = from_complex(&out, vec![n, 2, h, w]);
        Ok(self.push(value, Op::CoilSum(x)))
    }

    /// Smoothed modulus `sqrt(re^2 + im^2 + eps^2)`, `[N, 2C, H, W]` to `[N, C, H, W]`.
    pub fn cabs(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.complex_channels(x, "cabs")?;
        let (n, c2, h, w) = self.value(x).dims4()?;
        let z = to_complex(self.value(x));
        let data = z.iter().map(|v| (v.norm_sqr() + eps * eps).sqrt()).collect();
        let value = Tensor::new(vec![n, c2 / 2, h, w], data)?;
        Ok(self.push(value, Op::CAbs(x)))
    }

    /// Divides the coil channels of `[N, 2L, H, W]` by their per-pixel RSS on
    /// `support` (length `N * H * W`) and zeroes them elsewhere.
    pub fn coil_normalize(&mut self, x: Var, support: Vec<bool>) -> Result<Var> {
        self.complex_channels(x, "coil_normalize")?;
        let (n, c2, h, w) = self.value(x).dims4()?;
        if support.len() != n * h * w {
            return Err(Error::shape(format!("support has {} pixels, expected {}", support.len(), n * h * w)));
        }
        let z = to_complex(self.value(x));
        let rss = coil_rss(&z, n, c2 / 2, h * w);
        let mut out = z.clone();
        let (k, plane) = (c2 / 2, h * w);
        for b in 0..n {
            for c in 0..k {
                for p in 0..plane {
                    let s = b * plane + p;
                    let v = &mut out[(b * k + c) * plane + p];
                    *v = if support[s] && rss[s] > 0.0 { *v / rss[s] } else { Complex64::new(0.0, 0.0) };
                }
            }
        }
        let value = from_complex(&out, vec![n, c2, h, w]);
        Ok(self.push(value, Op::CoilNormalize(x, support)))
    }

    /// Reverse pass from a one-element `loss`, returning node gradients.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Reverse pass that also adds parameter gradients into `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.gradients(loss)?;
        for (v, id) in self.parameters() {
            if let Some(g) = grads.wrt(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
        Ok(grads)
    }

    fn backprop(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = g.data().iter().zip(a.data()).map(|(&gv, &av)| f(gv, av)).collect();
            Tensor::new(a.shape().to_vec(), data).expect("same shape")
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                acc(grads, *a, zip(val(*b), &|gv, bv| gv * bv));
                acc(grads, *b, zip(val(*a), &|gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                acc(grads, *a, zip(vb, &|gv, bv| gv / bv));
                let data = g.data().iter().zip(va.data()).zip(vb.data()).map(|((&gv, &av), &bv)| -gv * av / (bv * bv)).collect();
                acc(grads, *b, Tensor::new(vb.shape().to_vec(), data).expect("same shape"));
            }
            Op::Scale(a, s) => acc(grads, *a, g.map(|v| v * s)),
            Op::AddScalar(a) => acc(grads, *a, g.clone()),
            Op::MulConst(a, c) => acc(grads, *a, zip(c, &|gv, cv| gv * cv)),
            Op::ScaleBy { scalar, x } => {
                let s = val(*scalar).item();
                let dot: f64 = g.data().iter().zip(val(*x).data()).map(|(a, b)| a * b).sum();
                acc(grads, *scalar, Tensor::new(val(*scalar).shape().to_vec(), vec![dot]).expect("scalar"));
                acc(grads, *x, g.map(|v| v * s));
            }
            Op::Conv2d { input, weight, bias } => {
                let (vi, vw) = (val(*input), val(*weight));
                acc(grads, *input, kernels::conv2d_backward_input(g, vw, vi.shape()));
                acc(grads, *weight, kernels::conv2d_backward_weight(g, vi, vw.shape()));
                if let Some(b) = bias {
                    acc(grads, *b, kernels::conv2d_backward_bias(g));
                }
            }
            Op::Relu(a) => acc(grads, *a, zip(val(*a), &|gv, av| if av > 0.0 { gv } else { 0.0 })),
            Op::LeakyRelu(a, slope) => {
                let slope = *slope;
                acc(grads, *a, zip(val(*a), &|gv, av| if av > 0.0 { gv } else { slope * gv }))
            }
            Op::Concat(parts) => {
                let (n, total, h, w) = g.dims4().expect("nchw");
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = val(p).shape()[1];
                    let mut data = Vec::with_capacity(n * c * plane);
                    for b in 0..n {
                        data.extend_from_slice(&g.data()[(b * total + offset) * plane..(b * total + offset + c) * plane]);
                    }
                    acc(grads, p, Tensor::new(vec![n, c, h, w], data).expect("concat grad"));
                    offset += c;
                }
            }
            Op::Slice { x, start } => {
                let (n, c, h, w) = val(*x).dims4().expect("nchw");
                let len = g.shape()[1];
                let plane = h * w;
                let mut full = Tensor::zeros(&[n, c, h, w]);
                for b in 0..n {
                    full.data_mut()[(b * c + start) * plane..(b * c + start + len) * plane]
                        .copy_from_slice(&g.data()[b * len * plane..(b + 1) * len * plane]);
                }
                acc(grads, *x, full);
            }
            Op::Reshape(x) => acc(grads, *x, g.clone().reshaped(val(*x).shape()).expect("reshape grad")),
            Op::AvgPool2(x) => acc(grads, *x, kernels::avgpool2_backward(g)),
            Op::Upsample2(x) => acc(grads, *x, kernels::upsample2_backward(g)),
            Op::Dwt(x) => acc(grads, *x, kernels::idwt_layer(g)),
            Op::Idwt(x) => acc(grads, *x, kernels::dwt_layer(g)),
            Op::Mean(x) => {
                let v = val(*x);
                acc(grads, *x, Tensor::full(v.shape(), g.item() / v.len() as f64));
            }
            Op::Sum(x) => acc(grads, *x, Tensor::full(val(*x).shape(), g.item())),
            Op::Charbonnier(x, eps) => {
                let e2 = eps * eps;
                acc(grads, *x, zip(val(*x), &|gv, xv| gv * xv / (xv * xv + e2).sqrt()))
            }
            Op::PowScalar(x, p) => {
                let p = *p;
                acc(grads, *x, zip(val(*x), &|gv, xv| if xv > 0.0 { gv * p * xv.powf(p - 1.0) } else { 0.0 }))
            }
            Op::FilterValid(x, kernel) => acc(grads, *x, kernels::filter_valid_backward(g, kernel, val(*x).shape())),
            // the real representation of a unitary map has its inverse as transpose
            Op::Fft2c(x) => acc(grads, *x, complex_fft(g, true)),
            Op::Ifft2c(x) => acc(grads, *x, complex_fft(g, false)),
            Op::CMul(a, b) | Op::CMulConj(a, b) => {
                let conj_a = matches!(node.op, Op::CMulConj(..));
                let (va, vb) = (val(*a), val(*b));
                let (ka, kb, k) = broadcast_channels(va, vb).expect("checked on record");
                let (n, _, h, w) = va.dims4().expect("nchw");
                let plane = h * w;
                let (za, zb, zg) = (to_complex(va), to_complex(vb), to_complex(g));
                let mut ga = vec![Complex64::new(0.0, 0.0); n * k * plane];
                let mut gb = vec![Complex64::new(0.0, 0.0); n * k * plane];
                for bi in 0..n {
                    for c in 0..k {
                        let pa = &za[(bi * ka + if ka == 1 { 0 } else { c }) * plane..][..plane];
                        let pb = &zb[(bi * kb + if kb == 1 { 0 } else { c }) * plane..][..plane];
                        let pg = &zg[(bi * k + c) * plane..][..plane];
                        let base = (bi * k + c) * plane;
                        for p in 0..plane {
                            if conj_a {
                                ga[base + p] = pb[p] * pg[p].conj();
                                gb[base + p] = pa[p] * pg[p];
                            } else {
                                ga[base + p] = pg[p] * pb[p].conj();
                                gb[base + p] = pg[p] * pa[p].conj();
                            }
                        }
                    }
                }
                let ga = reduce_broadcast(ga, n, k, ka, plane);
                let gb = reduce_broadcast(gb, n, k, kb, plane);
                acc(grads, *a, from_complex(&ga, va.shape().to_vec()));
                acc(grads, *b, from_complex(&gb, vb.shape().to_vec()));
            }
            Op::CoilSum(x) => {
                let (n, c2, h, w) = val(*x).dims4().expect("nchw");
                let plane = h * w;
                let zg = to_complex(g);
                let mut out = Vec::with_capacity(n * c2 / 2 * plane);
                for b in 0..n {
                    for _ in 0..c2 / 2 {
                        out.extend_from_slice(&zg[b * plane..(b + 1) * plane]);
                    }
                }
                acc(grads, *x, from_complex(&out, vec![n, c2, h, w]));
            }
            Op::CAbs(x) => {
                let vx = val(*x);
                let z = to_complex(vx);
                let r = node.value.data();
                let out: Vec<Complex64> = z.iter().zip(r).zip(g.data()).map(|((zv, &rv), &gv)| zv * (gv / rv)).collect();
                acc(grads, *x, from_complex(&out, vx.shape().to_vec()));
            }
            Op::CoilNormalize(x, support) => {
                let vx = val(*x);
                let (n, c2, h, w) = vx.dims4().expect("nchw");
                let (k, plane) = (c2 / 2, h * w);
                let z = to_complex(vx);
                let out = to_complex(&node.value);
                let zg = to_complex(g);
                let rss = coil_rss(&z, n, k, plane);
                let mut gin = vec![Complex64::new(0.0, 0.0); z.len()];
                for b in 0..n {
                    for p in 0..plane {
                        let s = b * plane + p;
                        if !support[s] || rss[s] == 0.0 {
                            continue;
                        }
                        // d(s / r) = (I - u u^T) ds / r with u the normalized vector
                        let mut proj = 0.0;
                        for c in 0..k {
                            let i = (b * k + c) * plane + p;
                            proj += out[i].re * zg[i].re + out[i].im * zg[i].im;
                        }
                        for c in 0..k {
                            let i = (b * k + c) * plane + p;
                            gin[i] = (zg[i] - out[i] * proj) / rss[s];
                        }
                    }
                }
                acc(grads, *x, from_complex(&gin, vx.shape().to_vec()));
            }
        }
    }
}

fn coil_rss(z: &[Complex64], n: usize, k: usize, plane: usize) -> Vec<f64> {
    let mut rss = vec![0.0; n * plane];
    for b in 0..n {
        for c in 0..k {
            for (r, v) in rss[b * plane..(b + 1) * plane].iter_mut().zip(&z[(b * k + c) * plane..][..plane]) {
                *r += v.norm_sqr();
            }
        }
    }
    rss.iter_mut().for_each(|r| *r = r.sqrt());
    rss
}
