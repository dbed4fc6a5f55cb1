use crate::error::{Error, Result};

/// A partition of the state space into bins `B¹, …, Bᴿ`.
///
/// Bins are 0-based internally; each bin is nonempty.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinPartition {
    bin_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl BinPartition {
    /// `assignment[x]` is the 0-based bin of state `x`. Every bin index in
    /// `0..R` must be used.
    pub fn from_assignment(assignment: Vec<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::InvalidParameter("bin assignment is empty".into()));
        }
        let num_bins = assignment.iter().max().unwrap() + 1;
        let mut members = vec![Vec::new(); num_bins];
        for (state, &b) in assignment.iter().enumerate() {
            members[b].push(state);
        }
        if let Some(r) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidParameter(format!("bin {} has no states", r + 1)));
        }
        Ok(Self {
            bin_of: assignment,
            members,
        })
    }

    /// Consecutive blocks of `width` states; the last bin may be narrower.
    pub fn uniform_width(num_states: usize, width: usize) -> Result<Self> {
        if width == 0 || num_states == 0 {
            return Err(Error::InvalidParameter(
                "bin width and state count must be positive".into(),
            ));
        }
        Self::from_assignment((0..num_states).map(|x| x / width).collect())
    }

    /// One bin per state.
    pub fn singletons(num_states: usize) -> Result<Self> {
        Self::uniform_width(num_states, 1)
    }

    /// The whole state space as one bin.
    pub fn single(num_states: usize) -> Result<Self> {
        Self::from_assignment(vec![0; num_states])
    }

    pub fn num_bins(&self) -> usize {
        self.members.len()
    }

    pub fn num_states(&self) -> usize {
        self.bin_of.len()
    }

    pub fn bin_of(&self, state: usize) -> usize {
        self.bin_of[state]
    }

    pub fn members(&self, bin: usize) -> &[usize] {
        &self.members[bin]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.bin_of
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_width_with_ragged_tail() {
        let b = BinPartition::uniform_width(7, 3).unwrap();
        assert_eq!(b.num_bins(), 3);
        assert_eq!(b.members(2), &[6]);
        assert_eq!(b.bin_of(4), 1);
    }

    #[test]
    fn rejects_unused_bin_index() {
        assert!(BinPartition::from_assignment(vec![0, 2, 2]).is_err());
        assert!(BinPartition::from_assignment(vec![]).is_err());
        assert!(BinPartition::uniform_width(4, 0).is_err());
    }
}
