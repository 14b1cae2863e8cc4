use std::ops::Range;

/// Dense `f32` tensor in `[batch, channels, height, width]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Self { n, c, h, w, data: vec![0.0; n * c * h * w] }
    }

    pub fn full(n: usize, c: usize, h: usize, w: usize, value: f32) -> Self {
        Self { n, c, h, w, data: vec![value; n * c * h * w] }
    }

    /// Panics if `data.len()` does not match the shape.
    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n * c * h * w, "tensor data does not match shape");
        Self { n, c, h, w, data }
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn batch(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    /// Elements per sample (`c·h·w`).
    pub fn sample_len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn sample_mut(&mut self, i: usize) -> &mut [f32] {
        let len = self.sample_len();
        &mut self.data[i * len..(i + 1) * len]
    }

    /// Copy of samples `range` as a new tensor.
    pub fn samples(&self, range: Range<usize>) -> Tensor {
        let len = self.sample_len();
        Tensor {
            n: range.len(),
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data[range.start * len..range.end * len].to_vec(),
        }
    }

    /// Channel slice `[from, to)` of every sample.
    pub fn channel_range(&self, from: usize, to: usize) -> Tensor {
        assert!(from <= to && to <= self.c, "channel range out of bounds");
        let plane = self.plane();
        let mut out = Tensor::zeros(self.n, to - from, self.h, self.w);
        for i in 0..self.n {
            let src = &self.sample(i)[from * plane..to * plane];
            out.sample_mut(i).copy_from_slice(src);
        }
        out
    }

    /// Adds `part` into channels starting at `offset` of every sample.
    pub fn add_channels_at(&mut self, part: &Tensor, offset: usize) {
        assert_eq!(part.n, self.n, "batch mismatch");
        assert_eq!((part.h, part.w), (self.h, self.w), "spatial mismatch");
        assert!(offset + part.c <= self.c, "channel placement out of bounds");
        let plane = self.plane();
        for i in 0..self.n {
            let src = part.sample(i);
            let dst = &mut self.sample_mut(i)[offset * plane..(offset + part.c) * plane];
            dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
        }
    }

    /// Stacks tensors along the batch axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Tensor {
        let first = parts.first().expect("at least one tensor");
        let [_, c, h, w] = first.shape();
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape()[1..], &[c, h, w], "concat shape mismatch");
            data.extend_from_slice(&p.data);
            n += p.n;
        }
        Tensor { n, c, h, w, data }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, k: f32) {
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    pub fn mean_square(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
