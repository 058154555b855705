use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense array of scalars with an optional gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    dims: Vec<usize>,
    data: Vec<S>,
    requires_grad: bool,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<S>) -> Result<Self> {
        let dims = dims.into();
        let numel: usize = dims.iter().product();
        if numel != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} hold {numel} values but {} were supplied",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Self {
        let dims = dims.into();
        let numel = dims.iter().product();
        Self {
            dims,
            data: vec![S::zero(); numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(value: S) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![value],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn from_fn(dims: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> S) -> Self {
        let dims = dims.into();
        let numel: usize = dims.iter().product();
        Self {
            dims,
            data: (0..numel).map(&mut f).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("ragged rows"));
        }
        Self::new([rows.len(), cols], rows.concat())
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    pub(crate) fn set_grad(&mut self, grad: Vec<S>) {
        debug_assert_eq!(grad.len(), self.data.len());
        self.grad = Some(grad);
    }

    /// The value of a one-element tensor.
    pub fn item(&self) -> Result<S> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Contract(format!(
                "item() on tensor with dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn reshape(mut self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {dims:?}",
                self.dims
            )));
        }
        self.dims = dims;
        self.grad = None;
        Ok(self)
    }

    /// Row `i` of the tensor viewed as `[dims[0], rest]`.
    pub fn row(&self, i: usize) -> &[S] {
        let width = self.data.len() / self.dims[0].max(1);
        &self.data[i * width..(i + 1) * width]
    }

    /// Copies row `i` (leading axis) into a new tensor of rank `rank - 1`.
    pub fn index_outer(&self, i: usize) -> Tensor<S> {
        Tensor {
            dims: self.dims[1..].to_vec(),
            data: self.row(i).to_vec(),
            requires_grad: false,
            grad: None,
        }
    }

    /// Gathers rows of the leading axis into a new tensor.
    pub fn select_outer(&self, rows: &[usize]) -> Tensor<S> {
        let mut dims = self.dims.clone();
        dims[0] = rows.len();
        let mut data = Vec::with_capacity(rows.len() * self.data.len() / self.dims[0].max(1));
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        Tensor {
            dims,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor<S>]) -> Result<Self> {
        let Some(first) = items.first() else {
            return Err(Error::shape("stack of zero tensors"));
        };
        if items.iter().any(|t| t.dims != first.dims) {
            return Err(Error::shape("stack of tensors with differing dims"));
        }
        let mut dims = vec![items.len()];
        dims.extend_from_slice(&first.dims);
        let data = items.iter().flat_map(|t| t.data.iter().copied()).collect();
        Self::new(dims, data)
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| T::of(v.as_f64())).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
