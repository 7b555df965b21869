use crate::error::{Error, Result};

use super::Scalar;

/// Dense `(batch, channels, height, width)` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self {
            dims,
            data: vec![T::zero(); dims.iter().product()],
        }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::invalid(format!(
                "tensor {dims:?} needs {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn plane_len(&self) -> usize {
        self.dims[2] * self.dims[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.plane_len();
        let i = (n * self.dims[1] + c) * p;
        &self.data[i..i + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [T] {
        let p = self.plane_len();
        let i = (n * self.dims[1] + c) * p;
        &mut self.data[i..i + p]
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> T {
        self.data[((n * self.dims[1] + c) * self.dims[2] + y) * self.dims[3] + x]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Sample `n` alone as a batch of one.
    pub fn sample(&self, n: usize) -> Tensor4<T> {
        let len = self.dims[1] * self.plane_len();
        Tensor4 {
            dims: [1, self.dims[1], self.dims[2], self.dims[3]],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Removes `t` pixels from every spatial side.
    pub fn crop(&self, t: usize) -> Result<Tensor4<T>> {
        let [n, c, h, w] = self.dims;
        if h <= 2 * t || w <= 2 * t {
            return Err(Error::invalid(format!("cannot crop {t} from a {h}x{w} tensor")));
        }
        let (oh, ow) = (h - 2 * t, w - 2 * t);
        let mut data = Vec::with_capacity(n * c * oh * ow);
        for b in 0..n {
            for ch in 0..c {
                let p = self.plane(b, ch);
                for y in t..t + oh {
                    data.extend_from_slice(&p[y * w + t..y * w + t + ow]);
                }
            }
        }
        Ok(Tensor4 {
            dims: [n, c, oh, ow],
            data,
        })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Tensor4<T>, b: &Tensor4<T>) -> Tensor4<T> {
        let [n, ca, h, w] = a.dims;
        assert_eq!([n, h, w], [b.dims[0], b.dims[2], b.dims[3]], "concat shape mismatch");
        let cb = b.dims[1];
        let (la, lb) = (ca * h * w, cb * h * w);
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        for s in 0..n {
            data.extend_from_slice(&a.data[s * la..(s + 1) * la]);
            data.extend_from_slice(&b.data[s * lb..(s + 1) * lb]);
        }
        Tensor4 {
            dims: [n, ca + cb, h, w],
            data,
        }
    }

    /// Inverse of [`Tensor4::concat_channels`]: the first `ca` channels and
    /// the rest.
    pub fn split_channels(&self, ca: usize) -> (Tensor4<T>, Tensor4<T>) {
        let [n, c, h, w] = self.dims;
        let cb = c - ca;
        let (la, lb) = (ca * h * w, cb * h * w);
        let mut a = Vec::with_capacity(n * la);
        let mut b = Vec::with_capacity(n * lb);
        for s in 0..n {
            let chunk = &self.data[s * (la + lb)..(s + 1) * (la + lb)];
            a.extend_from_slice(&chunk[..la]);
            b.extend_from_slice(&chunk[la..]);
        }
        (
            Tensor4 {
                dims: [n, ca, h, w],
                data: a,
            },
            Tensor4 {
                dims: [n, cb, h, w],
                data: b,
            },
        )
    }
}
