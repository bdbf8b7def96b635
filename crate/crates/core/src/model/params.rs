use super::Scalar;

/// One named trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

/// All trainable tensors of a model, in a fixed order. Gradient buffers and
/// optimizer state use the same type with identical block shapes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet<T> {
    blocks: Vec<ParamBlock<T>>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn new() -> Self {
        ParameterSet { blocks: Vec::new() }
    }

    /// Appends a block and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<T>) -> usize {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "block shape/data mismatch");
        self.blocks.push(ParamBlock {
            name: name.into(),
            shape,
            data,
        });
        self.blocks.len() - 1
    }

    pub fn zeros_like(&self) -> Self {
        ParameterSet {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    data: vec![T::zero(); b.data.len()],
                })
                .collect(),
        }
    }

    pub fn blocks(&self) -> &[ParamBlock<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ParamBlock<T>] {
        &mut self.blocks
    }

    #[inline]
    pub fn data(&self, block: usize) -> &[T] {
        &self.blocks[block].data
    }

    #[inline]
    pub fn data_mut(&mut self, block: usize) -> &mut [T] {
        &mut self.blocks[block].data
    }

    /// Two mutable blocks at once (weight and bias gradients).
    pub fn pair_mut(&mut self, a: usize, b: usize) -> (&mut [T], &mut [T]) {
        assert!(a < b, "pair_mut expects a < b");
        let (lo, hi) = self.blocks.split_at_mut(b);
        (&mut lo[a].data, &mut hi[0].data)
    }

    /// Total number of scalars.
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_layout<U>(&self, other: &ParameterSet<U>) -> bool {
        self.blocks.len() == other.blocks.len()
            && self
                .blocks
                .iter()
                .zip(&other.blocks)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn flatten(&self) -> Vec<T> {
        self.blocks.iter().flat_map(|b| b.data.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.len());
        let mut off = 0;
        for b in &mut self.blocks {
            let n = b.data.len();
            b.data.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
    }

    pub fn fill(&mut self, value: T) {
        for b in &mut self.blocks {
            b.data.iter_mut().for_each(|v| *v = value);
        }
    }

    /// `self += other`.
    pub fn add_assign(&mut self, other: &ParameterSet<T>) {
        debug_assert!(self.same_layout(other));
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: T) {
        for b in &mut self.blocks {
            b.data.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.blocks.iter().all(|b| b.data.iter().all(|v| v.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            blocks: self
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    data: b.data.iter().map(|&v| U::from(v).expect("cast")).collect(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flatten_round_trip_and_layout() {
        let mut p = ParameterSet::<f32>::new();
        p.push("a", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]);
        p.push("b", vec![3], vec![5.0, 6.0, 7.0]);
        let flat = p.flatten();
        let mut q = p.zeros_like();
        assert!(q.same_layout(&p));
        q.assign_flat(&flat);
        assert_eq!(p, q);
        q.add_assign(&p);
        q.scale(0.5);
        assert_eq!(p, q);
        let (a, b) = q.pair_mut(0, 1);
        a[0] = 9.0;
        b[0] = 9.0;
        assert_eq!(q.flatten()[0], 9.0);
        assert_eq!(q.flatten()[4], 9.0);
    }
}
