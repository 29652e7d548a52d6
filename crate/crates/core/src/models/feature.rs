use super::ModelError;

/// Number of chunks `n` and their dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ChunkLayout {
    pub chunks: usize,
    pub dim: usize,
}

impl ChunkLayout {
    pub fn new(chunks: usize, dim: usize) -> Result<Self, ModelError> {
        if chunks == 0 || dim == 0 {
            return Err(ModelError::InvalidInput(format!(
                "chunk layout needs n >= 1 and d >= 1, got n={chunks} d={dim}"
            )));
        }
        Ok(ChunkLayout { chunks, dim })
    }

    /// Full feature width `n · d`.
    pub fn width(&self) -> usize {
        self.chunks * self.dim
    }

    /// Flat index range occupied by chunk `i`.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        i * self.dim..(i + 1) * self.dim
    }
}

impl Default for ChunkLayout {
    fn default() -> Self {
        ChunkLayout { chunks: 4, dim: 8 }
    }
}

/// One feature vector split into `n` contiguous chunks of `d` scalars.
#[derive(Clone, Debug, PartialEq)]
pub struct ChunkedFeature {
    layout: ChunkLayout,
    values: Vec<f64>,
}

impl ChunkedFeature {
    pub fn new(layout: ChunkLayout, values: Vec<f64>) -> Result<Self, ModelError> {
        if values.len() != layout.width() {
            return Err(ModelError::InvalidInput(format!(
                "feature length {} does not match n*d = {}",
                values.len(),
                layout.width()
            )));
        }
        Ok(ChunkedFeature { layout, values })
    }

    pub fn from_chunks(chunks: &[&[f64]]) -> Result<Self, ModelError> {
        let dim = chunks.first().map_or(0, |c| c.len());
        let layout = ChunkLayout::new(chunks.len(), dim)?;
        if chunks.iter().any(|c| c.len() != dim) {
            return Err(ModelError::InvalidInput("chunks of unequal length".into()));
        }
        Ok(ChunkedFeature {
            layout,
            values: chunks.concat(),
        })
    }

    pub fn layout(&self) -> ChunkLayout {
        self.layout
    }

    pub fn chunks(&self) -> usize {
        self.layout.chunks
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn chunk(&self, i: usize) -> &[f64] {
        &self.values[self.layout.range(i)]
    }

    pub fn chunk_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.range(i);
        &mut self.values[r]
    }

    pub fn split(&self) -> Vec<&[f64]> {
        self.values.chunks_exact(self.layout.dim).collect()
    }
}
