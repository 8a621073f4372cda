//! Dense row-major storage for embedding matrices and per-video frame blocks.

use crate::numerics::NumericsError;
use crate::scalar::Scalar;

/// Row-major dense matrix. Every public constructor rejects non-finite
/// entries so downstream kernels can assume finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<S: Scalar> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> DenseMatrix<S> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::LengthMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumericsError::LengthMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [S] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.cols.max(1))
    }

    /// Convert the element type, widening through f64.
    pub fn cast<T: Scalar>(&self) -> DenseMatrix<T> {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .map(|&x| crate::scalar::narrow(crate::scalar::wide(x)))
                .collect(),
        }
    }
}

/// Contiguous `videos x frames x dim` feature block (row-major, frame rows
/// of one video adjacent). Backs both support sets and augmented views.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock<S: Scalar> {
    videos: usize,
    frames: usize,
    dim: usize,
    data: Vec<S>,
}

impl<S: Scalar> FeatureBlock<S> {
    pub fn from_vec(
        videos: usize,
        frames: usize,
        dim: usize,
        data: Vec<S>,
    ) -> Result<Self, NumericsError> {
        if data.len() != videos * frames * dim {
            return Err(NumericsError::LengthMismatch {
                expected: videos * frames * dim,
                actual: data.len(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite);
        }
        Ok(Self {
            videos,
            frames,
            dim,
            data,
        })
    }

    /// Stack per-video `frames x dim` matrices into one block.
    pub fn from_videos(videos: &[DenseMatrix<S>]) -> Result<Self, NumericsError> {
        let frames = videos.first().map_or(0, DenseMatrix::rows);
        let dim = videos.first().map_or(0, DenseMatrix::cols);
        let mut data = Vec::with_capacity(videos.len() * frames * dim);
        for v in videos {
            if v.rows() != frames || v.cols() != dim {
                return Err(NumericsError::LengthMismatch {
                    expected: frames * dim,
                    actual: v.rows() * v.cols(),
                });
            }
            data.extend_from_slice(v.data());
        }
        Self::from_vec(videos.len(), frames, dim, data)
    }

    pub fn zeros(videos: usize, frames: usize, dim: usize) -> Self {
        Self {
            videos,
            frames,
            dim,
            data: vec![S::zero(); videos * frames * dim],
        }
    }

    pub fn videos(&self) -> usize {
        self.videos
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, video: usize, frame: usize) -> &[S] {
        let start = (video * self.frames + frame) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn frame_mut(&mut self, video: usize, frame: usize) -> &mut [S] {
        let start = (video * self.frames + frame) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// One video as a `frames x dim` matrix slice.
    pub fn video(&self, video: usize) -> DenseMatrix<S> {
        let start = video * self.frames * self.dim;
        DenseMatrix {
            rows: self.frames,
            cols: self.dim,
            data: self.data[start..start + self.frames * self.dim].to_vec(),
        }
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn cast<T: Scalar>(&self) -> FeatureBlock<T> {
        FeatureBlock {
            videos: self.videos,
            frames: self.frames,
            dim: self.dim,
            data: self
                .data
                .iter()
                .map(|&x| crate::scalar::narrow(crate::scalar::wide(x)))
                .collect(),
        }
    }
}
