use super::ops::{self, Extremum};
use super::{Real, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    },
    /// Output element `i` copies input element `index[i]` (max-pool and
    /// min/max filters).
    Route {
        input: Var,
        index: Vec<usize>,
    },
    AvgPool {
        input: Var,
        region: usize,
    },
    Prelu {
        input: Var,
        slope: Var,
    },
    Bilinear {
        input: Var,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale {
        input: Var,
        factor: T,
    },
    Offset {
        input: Var,
    },
    Abs(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    SpatialMean(Var),
    ChannelMean(Var),
    Index {
        input: Var,
        at: usize,
    },
    DiffX(Var),
    DiffY(Var),
    Narrow {
        input: Var,
        start: usize,
    },
    Concat(Var, Var),
    SSlice {
        grid: Var,
        image: Var,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Single-use record of differentiable operations for one forward pass.
///
/// Every method evaluates its forward kernel eagerly and appends a node;
/// [`Tape::backward`] then replays the adjoints in reverse order.
pub struct Tape<T: Real = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Tape::backward`], addressed by the [`Var`] of
/// each leaf that requires a gradient.
pub struct Grads<T> {
    slots: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.slots.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.slots.get_mut(v.0).and_then(Option::take)
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let value = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            stride,
            padding,
        )?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &inputs,
        ))
    }

    pub fn maxpool2d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let (value, index) = ops::maxpool2d_indexed(self.value(input), kernel, stride)?;
        Ok(self.push(value, Op::Route { input, index }, &[input]))
    }

    pub fn avgpool2d(&mut self, input: Var, region: usize) -> Result<Var> {
        let value = ops::avgpool2d(self.value(input), region)?;
        Ok(self.push(value, Op::AvgPool { input, region }, &[input]))
    }

    pub fn channel_extremum(&mut self, input: Var, kind: Extremum) -> Result<Var> {
        let (value, index) = ops::channel_extremum(self.value(input), kind)?;
        Ok(self.push(value, Op::Route { input, index }, &[input]))
    }

    pub fn window_extremum(&mut self, input: Var, patch: usize, kind: Extremum) -> Result<Var> {
        let (value, index) = ops::window_extremum(self.value(input), patch, kind)?;
        Ok(self.push(value, Op::Route { input, index }, &[input]))
    }

    pub fn dark_channel(&mut self, img: Var, patch: usize) -> Result<Var> {
        let m = self.channel_extremum(img, Extremum::Min)?;
        self.window_extremum(m, patch, Extremum::Min)
    }

    pub fn bright_channel(&mut self, img: Var, patch: usize) -> Result<Var> {
        let m = self.channel_extremum(img, Extremum::Max)?;
        self.window_extremum(m, patch, Extremum::Max)
    }

    /// PReLU with a single shared slope (`slope` must hold one value).
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let s = self.value(slope);
        if !s.is_scalar() {
            return Err(TensorError::shape("prelu", "single-value slope", s.shape()));
        }
        let value = ops::prelu(self.value(input), s.item());
        Ok(self.push(value, Op::Prelu { input, slope }, &[input, slope]))
    }

    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let value = ops::bilinear_resize(self.value(input), out_h, out_w)?;
        Ok(self.push(value, Op::Bilinear { input }, &[input]))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::shape(op, format!("shape {sa:?}"), sb));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let value = self.value(input).map(|x| x * factor);
        self.push(value, Op::Scale { input, factor }, &[input])
    }

    /// `input + offset`, elementwise.
    pub fn offset(&mut self, input: Var, offset: T) -> Var {
        let value = self.value(input).map(|x| x + offset);
        self.push(value, Op::Offset { input }, &[input])
    }

    pub fn abs(&mut self, input: Var) -> Var {
        let value = self.value(input).map(T::abs);
        self.push(value, Op::Abs(input), &[input])
    }

    pub fn square(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|x| x * x);
        self.push(value, Op::Square(input), &[input])
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(ops::sum_of(self.value(input).data()));
        self.push(value, Op::Sum(input), &[input])
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(ops::mean_of(self.value(input).data()));
        self.push(value, Op::Mean(input), &[input])
    }

    pub fn spatial_mean(&mut self, input: Var) -> Result<Var> {
        let value = ops::spatial_mean(self.value(input))?;
        Ok(self.push(value, Op::SpatialMean(input), &[input]))
    }

    pub fn channel_mean(&mut self, input: Var) -> Result<Var> {
        let value = ops::channel_mean(self.value(input))?;
        Ok(self.push(value, Op::ChannelMean(input), &[input]))
    }

    /// Element `at` of the flattened input, as a one-value tensor.
    pub fn index(&mut self, input: Var, at: usize) -> Result<Var> {
        let t = self.value(input);
        if at >= t.numel() {
            return Err(TensorError::invalid(
                "index",
                format!("index {at} out of range for {} elements", t.numel()),
            ));
        }
        let value = Tensor::scalar(t.data()[at]);
        Ok(self.push(value, Op::Index { input, at }, &[input]))
    }

    pub fn diff_x(&mut self, input: Var) -> Result<Var> {
        let value = ops::diff_x(self.value(input))?;
        Ok(self.push(value, Op::DiffX(input), &[input]))
    }

    pub fn diff_y(&mut self, input: Var) -> Result<Var> {
        let value = ops::diff_y(self.value(input))?;
        Ok(self.push(value, Op::DiffY(input), &[input]))
    }

    pub fn narrow_channels(&mut self, input: Var, start: usize, len: usize) -> Result<Var> {
        let value = ops::narrow_channels(self.value(input), start, len)?;
        Ok(self.push(value, Op::Narrow { input, start }, &[input]))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = ops::concat_channels(self.value(a), self.value(b))?;
        Ok(self.push(value, Op::Concat(a, b), &[a, b]))
    }

    pub fn s_slice(&mut self, grid: Var, image: Var) -> Result<Var> {
        let value = ops::s_slice(self.value(grid), self.value(image))?;
        Ok(self.push(value, Op::SSlice { grid, image }, &[grid, image]))
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to every
    /// leaf that requires a gradient. Leaves the loss does not depend on get
    /// a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut slots: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[loss.0].requires_grad {
            slots[loss.0] = Some(Tensor::from_parts(lv.shape().to_vec(), vec![T::one()]));
        }

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = slots[i].take() else { continue };
            self.adjoint(node, &g, &mut slots)?;
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && slots[i].is_none() {
                slots[i] = Some(Tensor::from_parts(
                    node.value.shape().to_vec(),
                    vec![T::zero(); node.value.numel()],
                ));
            }
        }
        Ok(Grads { slots })
    }

    fn accumulate(&self, slots: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut slots[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn adjoint(&self, node: &Node<T>, g: &Tensor<T>, slots: &mut [Option<Tensor<T>>]) -> Result<()> {
        let shape_of = |v: Var| self.value(v).shape().to_vec();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => {
                let (gin, gw, gb) = ops::conv2d_backward(
                    self.value(*input),
                    self.value(*weight),
                    g,
                    *stride,
                    *padding,
                    self.needs(*input),
                )?;
                if let Some(gin) = gin {
                    self.accumulate(slots, *input, gin);
                }
                self.accumulate(slots, *weight, gw);
                if let Some(b) = bias {
                    self.accumulate(slots, *b, gb);
                }
            }
            Op::Route { input, index } => {
                let gin = ops::route_backward(g, index, &shape_of(*input));
                self.accumulate(slots, *input, gin);
            }
            Op::AvgPool { input, region } => {
                let gin = ops::avgpool2d_backward(g, &shape_of(*input), *region);
                self.accumulate(slots, *input, gin);
            }
            Op::Prelu { input, slope } => {
                let s = self.value(*slope).item();
                let (gin, ds) = ops::prelu_backward(self.value(*input), s, g);
                self.accumulate(slots, *input, gin);
                self.accumulate(slots, *slope, Tensor::from_parts(shape_of(*slope), vec![ds]));
            }
            Op::Bilinear { input } => {
                let s = shape_of(*input);
                self.accumulate(slots, *input, ops::bilinear_resize_backward(g, s[1], s[2]));
            }
            Op::Add(a, b) => {
                self.accumulate(slots, *a, g.clone());
                self.accumulate(slots, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(slots, *a, g.clone());
                self.accumulate(slots, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(slots, *a, Tensor::from_parts(g.shape().to_vec(), d));
                }
                if self.needs(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(&x, &y)| x * y).collect();
                    self.accumulate(slots, *b, Tensor::from_parts(g.shape().to_vec(), d));
                }
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                self.accumulate(slots, *input, g.map(|v| v * f));
            }
            Op::Offset { input } => self.accumulate(slots, *input, g.clone()),
            Op::Abs(input) => {
                let x = self.value(*input);
                let d = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| {
                        if xv > T::zero() {
                            gv
                        } else if xv < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                self.accumulate(slots, *input, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Square(input) => {
                let x = self.value(*input);
                let two = T::lit(2.0);
                let d = g.data().iter().zip(x.data()).map(|(&gv, &xv)| two * xv * gv).collect();
                self.accumulate(slots, *input, Tensor::from_parts(g.shape().to_vec(), d));
            }
            Op::Sum(input) => {
                let s = shape_of(*input);
                let n = s.iter().product();
                self.accumulate(slots, *input, Tensor::from_parts(s, vec![g.item(); n]));
            }
            Op::Mean(input) => {
                let s = shape_of(*input);
                let n: usize = s.iter().product();
                let v = g.item() / T::lit(n as f64);
                self.accumulate(slots, *input, Tensor::from_parts(s, vec![v; n]));
            }
            Op::SpatialMean(input) => {
                let s = shape_of(*input);
                let hw = s[1] * s[2];
                let inv = T::lit(1.0 / hw as f64);
                let mut d = Vec::with_capacity(s[0] * hw);
                for &gv in g.data() {
                    d.extend(std::iter::repeat_n(gv * inv, hw));
                }
                self.accumulate(slots, *input, Tensor::from_parts(s, d));
            }
            Op::ChannelMean(input) => {
                let s = shape_of(*input);
                let inv = T::lit(1.0 / s[0] as f64);
                let plane: Vec<T> = g.data().iter().map(|&v| v * inv).collect();
                let d = plane.repeat(s[0]);
                self.accumulate(slots, *input, Tensor::from_parts(s, d));
            }
            Op::Index { input, at } => {
                let s = shape_of(*input);
                let mut d = vec![T::zero(); s.iter().product()];
                d[*at] = g.item();
                self.accumulate(slots, *input, Tensor::from_parts(s, d));
            }
            Op::DiffX(input) => self.accumulate(slots, *input, ops::diff_x_backward(g)),
            Op::DiffY(input) => self.accumulate(slots, *input, ops::diff_y_backward(g)),
            Op::Narrow { input, start } => {
                let s = shape_of(*input);
                let hw = s[1] * s[2];
                let mut d = vec![T::zero(); s.iter().product()];
                d[start * hw..start * hw + g.numel()].copy_from_slice(g.data());
                self.accumulate(slots, *input, Tensor::from_parts(s, d));
            }
            Op::Concat(a, b) => {
                let (sa, sb) = (shape_of(*a), shape_of(*b));
                let na: usize = sa.iter().product();
                if self.needs(*a) {
                    self.accumulate(slots, *a, Tensor::from_parts(sa, g.data()[..na].to_vec()));
                }
                if self.needs(*b) {
                    self.accumulate(slots, *b, Tensor::from_parts(sb, g.data()[na..].to_vec()));
                }
            }
            Op::SSlice { grid, image } => {
                let (gg, gi) = ops::s_slice_backward(self.value(*grid), self.value(*image), g);
                self.accumulate(slots, *grid, gg);
                self.accumulate(slots, *image, gi);
            }
        }
        Ok(())
    }
}
