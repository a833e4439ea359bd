use std::fmt::Debug;

/// A path `z_{1:T}`, optionally carrying the particle indices it was traced through.
///
/// Indices in `lineage` are 0-based; particle 0 is the pinned reference particle.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Trajectory<S = usize> {
    pub points: Vec<S>,
    pub lineage: Option<Vec<usize>>,
}

impl<S: Clone> Trajectory<S> {
    pub fn new(points: Vec<S>) -> Self {
        Self { points, lineage: None }
    }

    pub fn with_lineage(points: Vec<S>, lineage: Vec<usize>) -> Self {
        debug_assert_eq!(points.len(), lineage.len());
        Self { points, lineage: Some(lineage) }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Same points, lineage dropped.
    pub fn bare(&self) -> Self {
        Self::new(self.points.clone())
    }
}

impl<S> From<Vec<S>> for Trajectory<S> {
    fn from(points: Vec<S>) -> Self {
        Self { points, lineage: None }
    }
}
