//! Dense f64 tensors and the differentiable primitives built on them.
//!
//! Everything here is deliberately plain: row-major `Vec<f64>` storage and
//! explicit loops, structured so the hot inner loop always runs over a
//! contiguous row slice. The recurrent cells in [`crate::rnn`] are wired
//! entirely out of these primitives, and each forward op has matching
//! `grad_*` adjoints used by backpropagation.

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zeros tensor with the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::Dimension(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Zero tensor with the same shape as `self`.
    pub fn zeros_like(&self) -> Tensor {
        Tensor::zeros(&self.shape)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Total number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Consumes the tensor, returning the flat buffer.
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Sets every element to zero, keeping the shape.
    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self += scale * other`. Shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "add_scaled: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// True if every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Elementwise sigmoid over a slice.
pub fn sigmoid_inplace(xs: &mut [f64]) {
    for x in xs {
        *x = sigmoid(*x);
    }
}

/// Elementwise tanh over a slice.
pub fn tanh_inplace(xs: &mut [f64]) {
    for x in xs {
        *x = x.tanh();
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// `out[i] += a[i] * b[i]`.
pub fn hadamard_acc(a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), b.len());
    debug_assert_eq!(a.len(), out.len());
    for i in 0..out.len() {
        out[i] += a[i] * b[i];
    }
}

/// Elementwise sigmoid, returning a new tensor.
pub fn sigmoid_t(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    sigmoid_inplace(out.data_mut());
    out
}

/// Elementwise tanh, returning a new tensor.
pub fn tanh_t(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    tanh_inplace(out.data_mut());
    out
}

/// Elementwise max(0, x), returning a new tensor.
pub fn relu_t(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = relu(*v));
    out
}

/// Elementwise product of two equally shaped tensors.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "hadamard: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = a.zeros_like();
    hadamard_acc(a.data(), b.data(), out.data_mut());
    Ok(out)
}

/// `y = W x` for `W: [m, n]`, `x: [n]`, returning `y: [m]`.
pub fn matvec(w: &Tensor, x: &[f64]) -> Result<Vec<f64>> {
    let mut y = vec![0.0; w.shape()[0]];
    matvec_acc(w, x, &mut y)?;
    Ok(y)
}

/// `y += W x`.
pub fn matvec_acc(w: &Tensor, x: &[f64], y: &mut [f64]) -> Result<()> {
    if w.rank() != 2 {
        return Err(Error::Dimension(format!(
            "matvec: weight must be rank 2, got {:?}",
            w.shape()
        )));
    }
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if x.len() != n || y.len() != m {
        return Err(Error::Dimension(format!(
            "matvec: W[{m},{n}] with x[{}], y[{}]",
            x.len(),
            y.len()
        )));
    }
    for i in 0..m {
        let row = &w.data[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for j in 0..n {
            acc += row[j] * x[j];
        }
        y[i] += acc;
    }
    Ok(())
}

/// Adjoint of [`matvec_acc`] w.r.t. the input: `dx += Wᵀ dy`.
pub fn matvec_grad_input_acc(w: &Tensor, dy: &[f64], dx: &mut [f64]) -> Result<()> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    if dy.len() != m || dx.len() != n {
        return Err(Error::Dimension(format!(
            "matvec_grad_input: W[{m},{n}] with dy[{}], dx[{}]",
            dy.len(),
            dx.len()
        )));
    }
    for i in 0..m {
        let row = &w.data[i * n..(i + 1) * n];
        let g = dy[i];
        for j in 0..n {
            dx[j] += g * row[j];
        }
    }
    Ok(())
}

/// Adjoint of [`matvec_acc`] w.r.t. the weight: `dW += dy ⊗ x`.
pub fn matvec_grad_weight_acc(dy: &[f64], x: &[f64], dw: &mut Tensor) -> Result<()> {
    let (m, n) = (dw.shape()[0], dw.shape()[1]);
    if dy.len() != m || x.len() != n {
        return Err(Error::Dimension(format!(
            "matvec_grad_weight: dW[{m},{n}] with dy[{}], x[{}]",
            dy.len(),
            x.len()
        )));
    }
    for i in 0..m {
        let row = &mut dw.data[i * n..(i + 1) * n];
        let g = dy[i];
        for j in 0..n {
            row[j] += g * x[j];
        }
    }
    Ok(())
}

/// `y = W x + b`.
pub fn affine(w: &Tensor, x: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != w.shape()[0] {
        return Err(Error::Dimension(format!(
            "affine: W[{},{}] with b[{}]",
            w.shape()[0],
            w.shape()[1],
            b.len()
        )));
    }
    let mut y = b.to_vec();
    matvec_acc(w, x, &mut y)?;
    Ok(y)
}

fn check_conv_shapes(input: &Tensor, kernel: &Tensor, out: &Tensor) -> Result<(usize, usize, usize, usize, usize, usize)> {
    if input.rank() != 3 || kernel.rank() != 4 || out.rank() != 3 {
        return Err(Error::Dimension(format!(
            "conv2d: input {:?}, kernel {:?}, out {:?} (want ranks 3/4/3)",
            input.shape(),
            kernel.shape(),
            out.shape()
        )));
    }
    let (ci, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (co, kci, kh, kw) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    if kci != ci || out.shape() != [co, h, w] {
        return Err(Error::Dimension(format!(
            "conv2d: input {:?}, kernel {:?}, out {:?}",
            input.shape(),
            kernel.shape(),
            out.shape()
        )));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Dimension(format!(
            "conv2d: kernel dims must be odd for same padding, got {kh}x{kw}"
        )));
    }
    Ok((ci, h, w, co, kh, kw))
}

/// Same-padded 2-D cross-correlation with a per-output-channel bias.
///
/// `input: [C_in, H, W]`, `kernel: [C_out, C_in, KH, KW]` with odd `KH`, `KW`,
/// `bias: [C_out]`, output `[C_out, H, W]`; values outside the input are
/// treated as zero. The kernel is applied without flipping (the
/// deep-learning convention).
pub fn conv2d_same(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    if input.rank() != 3 || kernel.rank() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d: input {:?}, kernel {:?} (want ranks 3/4)",
            input.shape(),
            kernel.shape()
        )));
    }
    let co = kernel.shape()[0];
    if bias.rank() != 1 || bias.len() != co {
        return Err(Error::Dimension(format!(
            "conv2d: bias {:?} for {co} output channels",
            bias.shape()
        )));
    }
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let mut out = Tensor::zeros(&[co, h, w]);
    for (ch, &b) in bias.data().iter().enumerate() {
        out.data_mut()[ch * h * w..(ch + 1) * h * w]
            .iter_mut()
            .for_each(|v| *v = b);
    }
    conv2d_same_acc(input, kernel, &mut out)?;
    Ok(out)
}

/// `out += conv2d_same(input, kernel)`.
pub fn conv2d_same_acc(input: &Tensor, kernel: &Tensor, out: &mut Tensor) -> Result<()> {
    let (ci_n, h, w, co_n, kh, kw) = check_conv_shapes(input, kernel, out)?;
    let (ph, pw) = (kh / 2, kw / 2);
    for oc in 0..co_n {
        for ci in 0..ci_n {
            for u in 0..kh {
                // Output rows i for which input row i + u - ph exists.
                let i_lo = ph.saturating_sub(u);
                let i_hi = (h + ph).saturating_sub(u).min(h);
                for i in i_lo..i_hi {
                    let r = i + u - ph;
                    let in_row = &input.data[(ci * h + r) * w..(ci * h + r + 1) * w];
                    let out_row = &mut out.data[(oc * h + i) * w..(oc * h + i + 1) * w];
                    let k_row = &kernel.data
                        [((oc * ci_n + ci) * kh + u) * kw..((oc * ci_n + ci) * kh + u + 1) * kw];
                    for v in 0..kw {
                        let kv = k_row[v];
                        // Output cols j for which input col j + v - pw exists.
                        let j_lo = pw.saturating_sub(v);
                        let j_hi = (w + pw).saturating_sub(v).min(w);
                        if j_lo >= j_hi {
                            continue;
                        }
                        let s = (v + j_lo) - pw;
                        let src = &in_row[s..s + (j_hi - j_lo)];
                        let dst = &mut out_row[j_lo..j_hi];
                        for (d, &x) in dst.iter_mut().zip(src) {
                            *d += kv * x;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Adjoint of [`conv2d_same_acc`] w.r.t. the input: scatters `dy` back
/// through the kernel into `dx` (same shapes as the forward input).
pub fn conv2d_grad_input_acc(dy: &Tensor, kernel: &Tensor, dx: &mut Tensor) -> Result<()> {
    let (ci_n, h, w, co_n, kh, kw) = check_conv_shapes(dx, kernel, dy)?;
    let (ph, pw) = (kh / 2, kw / 2);
    for oc in 0..co_n {
        for ci in 0..ci_n {
            for u in 0..kh {
                let i_lo = ph.saturating_sub(u);
                let i_hi = (h + ph).saturating_sub(u).min(h);
                for i in i_lo..i_hi {
                    let r = i + u - ph;
                    let dy_row = &dy.data[(oc * h + i) * w..(oc * h + i + 1) * w];
                    let dx_row = &mut dx.data[(ci * h + r) * w..(ci * h + r + 1) * w];
                    let k_row = &kernel.data
                        [((oc * ci_n + ci) * kh + u) * kw..((oc * ci_n + ci) * kh + u + 1) * kw];
                    for v in 0..kw {
                        let kv = k_row[v];
                        let j_lo = pw.saturating_sub(v);
                        let j_hi = (w + pw).saturating_sub(v).min(w);
                        if j_lo >= j_hi {
                            continue;
                        }
                        let s = (v + j_lo) - pw;
                        let src = &dy_row[j_lo..j_hi];
                        let dst = &mut dx_row[s..s + (j_hi - j_lo)];
                        for (d, &g) in dst.iter_mut().zip(src) {
                            *d += kv * g;
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Adjoint of [`conv2d_same_acc`] w.r.t. the kernel.
pub fn conv2d_grad_kernel_acc(dy: &Tensor, input: &Tensor, dk: &mut Tensor) -> Result<()> {
    let (ci_n, h, w, co_n, kh, kw) = check_conv_shapes(input, dk, dy)?;
    let (ph, pw) = (kh / 2, kw / 2);
    for oc in 0..co_n {
        for ci in 0..ci_n {
            for u in 0..kh {
                let i_lo = ph.saturating_sub(u);
                let i_hi = (h + ph).saturating_sub(u).min(h);
                for v in 0..kw {
                    let j_lo = pw.saturating_sub(v);
                    let j_hi = (w + pw).saturating_sub(v).min(w);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let s = (v + j_lo) - pw;
                    let mut acc = 0.0;
                    for i in i_lo..i_hi {
                        let r = i + u - ph;
                        let dy_row = &dy.data[(oc * h + i) * w..(oc * h + i) * w + w];
                        let in_row = &input.data[(ci * h + r) * w..(ci * h + r) * w + w];
                        let a = &dy_row[j_lo..j_hi];
                        let b = &in_row[s..s + (j_hi - j_lo)];
                        for (g, x) in a.iter().zip(b) {
                            acc += g * x;
                        }
                    }
                    dk.data[((oc * ci_n + ci) * kh + u) * kw + v] += acc;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// conv2d_same with a zero bias.
    fn conv0(input: &Tensor, kernel: &Tensor) -> Result<Tensor> {
        conv2d_same(input, kernel, &Tensor::zeros(&[kernel.shape()[0]]))
    }

    #[test]
    fn matvec_matches_reference_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_tensor(&mut rng, &[5, 7]);
        let x: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = matvec(&w, &x).unwrap();
        for i in 0..5 {
            let mut want = 0.0;
            for j in 0..7 {
                want += w.data()[i * 7 + j] * x[j];
            }
            assert!((y[i] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn affine_adds_bias() {
        let w = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = affine(&w, &[1.0, 1.0], &[10.0, 20.0]).unwrap();
        assert_eq!(y, vec![13.0, 27.0]);
    }

    #[test]
    fn matvec_rejects_bad_shapes() {
        let w = Tensor::zeros(&[3, 4]);
        assert!(matvec(&w, &[0.0; 5]).is_err());
        let w1 = Tensor::zeros(&[3]);
        assert!(matvec(&w1, &[0.0; 3]).is_err());
    }

    /// Plain quadruple-loop reference convolution, kept independent of the
    /// row-sliced implementation above.
    fn conv_reference(input: &Tensor, kernel: &Tensor) -> Tensor {
        let (ci_n, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (co_n, _, kh, kw) = (
            kernel.shape()[0],
            kernel.shape()[1],
            kernel.shape()[2],
            kernel.shape()[3],
        );
        let (ph, pw) = (kh / 2, kw / 2);
        let mut out = Tensor::zeros(&[co_n, h, w]);
        for oc in 0..co_n {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for ci in 0..ci_n {
                        for u in 0..kh {
                            for v in 0..kw {
                                let r = i as isize + u as isize - ph as isize;
                                let c = j as isize + v as isize - pw as isize;
                                if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
                                    continue;
                                }
                                acc += input.data()[(ci * h + r as usize) * w + c as usize]
                                    * kernel.data()[((oc * ci_n + ci) * kh + u) * kw + v];
                            }
                        }
                    }
                    out.data_mut()[(oc * h + i) * w + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let input = rand_tensor(&mut rng, &[1, 7, 7]);
        let mut kernel = Tensor::zeros(&[1, 1, 3, 3]);
        kernel.data_mut()[4] = 1.0;
        let out = conv0(&input, &kernel).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_matches_reference_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(ci, co, h, w, kh, kw) in
            &[(1, 1, 5, 5, 3, 3), (3, 2, 7, 7, 3, 3), (2, 4, 4, 6, 5, 3), (2, 2, 1, 1, 1, 1)]
        {
            let input = rand_tensor(&mut rng, &[ci, h, w]);
            let kernel = rand_tensor(&mut rng, &[co, ci, kh, kw]);
            let got = conv0(&input, &kernel).unwrap();
            let want = conv_reference(&input, &kernel);
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_ones_kernel_counts_overlap() {
        // All-ones 3×3 input under an all-ones 3×3 kernel: each output cell
        // counts how many input cells the window covers.
        let input = Tensor::from_vec(&[1, 3, 3], vec![1.0; 9]).unwrap();
        let kernel = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let out = conv0(&input, &kernel).unwrap();
        let want = [4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0];
        assert_eq!(out.data(), &want);
    }

    #[test]
    fn conv_bias_adds_per_output_channel() {
        let input = Tensor::from_vec(&[1, 2, 2], vec![0.0; 4]).unwrap();
        let kernel = Tensor::zeros(&[2, 1, 1, 1]);
        let bias = Tensor::from_vec(&[2], vec![3.0, -1.5]).unwrap();
        let out = conv2d_same(&input, &kernel, &bias).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0, 3.0, 3.0, -1.5, -1.5, -1.5, -1.5]);
        assert!(conv2d_same(&input, &kernel, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn affine_and_conv_are_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = rand_tensor(&mut rng, &[4, 6]);
        let b = vec![0.0; 4];
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (alpha, beta) = (0.37, -1.24);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, c)| alpha * a + beta * c).collect();
        let fx = affine(&w, &x, &b).unwrap();
        let fy = affine(&w, &y, &b).unwrap();
        let fmix = affine(&w, &mix, &b).unwrap();
        for k in 0..4 {
            assert!((fmix[k] - (alpha * fx[k] + beta * fy[k])).abs() < 1e-12);
        }

        let kx = rand_tensor(&mut rng, &[2, 3, 3, 3]);
        let tx = rand_tensor(&mut rng, &[3, 5, 5]);
        let ty = rand_tensor(&mut rng, &[3, 5, 5]);
        let mut tmix = tx.clone();
        tmix.data_mut()
            .iter_mut()
            .zip(ty.data())
            .for_each(|(a, &c)| *a = alpha * *a + beta * c);
        let cx = conv0(&tx, &kx).unwrap();
        let cy = conv0(&ty, &kx).unwrap();
        let cmix = conv0(&tmix, &kx).unwrap();
        for k in 0..cmix.len() {
            assert!(
                (cmix.data()[k] - (alpha * cx.data()[k] + beta * cy.data()[k])).abs() < 1e-12
            );
        }
    }

    #[test]
    fn elementwise_tensor_ops() {
        let x = Tensor::from_vec(&[3], vec![-2.0, 0.0, 3.0]).unwrap();
        assert_eq!(relu_t(&x).data(), &[0.0, 0.0, 3.0]);
        assert_eq!(sigmoid_t(&Tensor::from_vec(&[1], vec![0.0]).unwrap()).data(), &[0.5]);
        let a = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::from_vec(&[3], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(hadamard(&a, &b).unwrap().data(), &[4.0, 10.0, 18.0]);
        assert!(hadamard(&a, &Tensor::zeros(&[4])).is_err());
    }

    /// Strict containment holds wherever f64 can represent the gap to the
    /// bound (tanh rounds to ±1 beyond |x| ≈ 18.4, sigmoid to 1 beyond
    /// ≈ 36.7).
    #[test]
    fn sigmoid_tanh_stay_in_open_intervals() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..1000 {
            let v: f64 = rng.random_range(-30.0..30.0);
            let s = sigmoid(v);
            assert!(s > 0.0 && s < 1.0, "sigmoid({v}) = {s}");
            let t = v.tanh();
            assert!((-1.0..=1.0).contains(&t));
            if v.abs() < 17.0 {
                assert!(t > -1.0 && t < 1.0, "tanh({v}) = {t}");
            }
        }
    }

    #[test]
    fn conv_shift_kernel_shifts_with_zero_fill() {
        // Kernel picking the pixel one column to the right.
        let input = Tensor::from_vec(&[1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        let mut kernel = Tensor::zeros(&[1, 1, 1, 3]);
        kernel.data_mut()[2] = 1.0;
        let out = conv0(&input, &kernel).unwrap();
        assert_eq!(out.data(), &[2.0, 3.0, 0.0]);
    }

    #[test]
    fn conv_rejects_even_kernels_and_shape_mismatch() {
        let input = Tensor::zeros(&[1, 4, 4]);
        let kernel = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(conv0(&input, &kernel).is_err());
        let kernel = Tensor::zeros(&[1, 2, 3, 3]);
        assert!(conv0(&input, &kernel).is_err());
    }

    /// ⟨conv(x), y⟩ must equal ⟨x, convᵀ(y)⟩; this pins the grad-input
    /// scatter against the forward gather without sharing code paths.
    #[test]
    fn conv_grad_input_is_adjoint_of_forward()
    {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let input = rand_tensor(&mut rng, &[3, 6, 5]);
        let kernel = rand_tensor(&mut rng, &[2, 3, 3, 5]);
        let dy = rand_tensor(&mut rng, &[2, 6, 5]);
        let fwd = conv0(&input, &kernel).unwrap();
        let mut dx = input.zeros_like();
        conv2d_grad_input_acc(&dy, &kernel, &mut dx).unwrap();
        let lhs = dot(fwd.data(), dy.data());
        let rhs = dot(input.data(), dx.data());
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn conv_grad_kernel_is_adjoint_of_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input = rand_tensor(&mut rng, &[2, 5, 7]);
        let kernel = rand_tensor(&mut rng, &[3, 2, 5, 3]);
        let dy = rand_tensor(&mut rng, &[3, 5, 7]);
        let fwd = conv0(&input, &kernel).unwrap();
        let mut dk = kernel.zeros_like();
        conv2d_grad_kernel_acc(&dy, &input, &mut dk).unwrap();
        let lhs = dot(fwd.data(), dy.data());
        let rhs = dot(kernel.data(), dk.data());
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }

    #[test]
    fn matvec_grads_are_adjoints() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = rand_tensor(&mut rng, &[6, 4]);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = matvec(&w, &x).unwrap();

        let mut dx = vec![0.0; 4];
        matvec_grad_input_acc(&w, &dy, &mut dx).unwrap();
        assert!((dot(&y, &dy) - dot(&x, &dx)).abs() < 1e-12);

        let mut dw = w.zeros_like();
        matvec_grad_weight_acc(&dy, &x, &mut dw).unwrap();
        assert!((dot(&y, &dy) - dot(w.data(), dw.data())).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_and_relu_basics() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((sigmoid(4.0) + sigmoid(-4.0) - 1.0).abs() < 1e-15);
        assert_eq!(relu(-3.0), 0.0);
        assert_eq!(relu(2.5), 2.5);
        let mut xs = [0.0, 1.0];
        tanh_inplace(&mut xs);
        assert_eq!(xs[0], 0.0);
        assert!((xs[1] - 1.0f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn tensor_from_vec_validates_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn add_scaled_accumulates() {
        let mut a = Tensor::zeros(&[3]);
        let b = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        a.add_scaled(&b, 0.5).unwrap();
        assert_eq!(a.data(), &[0.5, 1.0, 1.5]);
        assert!(a.add_scaled(&Tensor::zeros(&[4]), 1.0).is_err());
    }
}
