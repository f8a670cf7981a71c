//! Channel-to-PE assignment for one layer.
//!
//! A layer with `out_ch` channels computed by `pe_count` processing
//! elements folds `f = out_ch / pe_count` channels onto each PE. The
//! hardware default assigns channel `c` to PE `c mod pe_count`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub layer: usize,
    pub pe_count: usize,
    /// `assignment[channel] = pe`; a total map over output channels.
    pub assignment: Vec<usize>,
}

impl Schedule {
    pub fn new(layer: usize, pe_count: usize, assignment: Vec<usize>) -> Result<Self> {
        let s = Schedule {
            layer,
            pe_count,
            assignment,
        };
        s.check_partition()?;
        Ok(s)
    }

    pub fn out_channels(&self) -> usize {
        self.assignment.len()
    }

    /// Channels per PE, reported as a ceiling when the PE count does not
    /// divide the channel count (the last round is ragged).
    pub fn folding_factor(&self) -> usize {
        self.out_channels().div_ceil(self.pe_count)
    }

    /// Channels grouped by PE, ascending within each group.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.pe_count];
        for (ch, &pe) in self.assignment.iter().enumerate() {
            groups[pe].push(ch);
        }
        groups
    }

    fn check_partition(&self) -> Result<()> {
        if self.pe_count == 0 {
            return Err(Error::usage("pe_count must be positive"));
        }
        if let Some(&pe) = self.assignment.iter().find(|&&pe| pe >= self.pe_count) {
            return Err(Error::usage(format!(
                "assignment references PE {pe}, but only {} exist",
                self.pe_count
            )));
        }
        Ok(())
    }
}

/// The FINN default schedule: channel `c` runs on PE `c mod pe_count`.
pub fn default_schedule(layer: usize, out_ch: usize, pe_count: usize) -> Result<Schedule> {
    if pe_count == 0 || out_ch == 0 {
        return Err(Error::usage("out_ch and pe_count must be positive"));
    }
    if pe_count > out_ch {
        return Err(Error::usage(format!(
            "pe_count {pe_count} exceeds channel count {out_ch}"
        )));
    }
    Schedule::new(layer, pe_count, (0..out_ch).map(|c| c % pe_count).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modulo_assignment_64_over_32() {
        let s = default_schedule(0, 64, 32).unwrap();
        assert_eq!(s.folding_factor(), 2);
        // the second PE computes channels 1 and 33
        assert_eq!(s.groups()[1], vec![1, 33]);
        // PE 30 computes channels 30 and 62
        assert_eq!(s.groups()[30], vec![30, 62]);
    }

    #[test]
    fn identity_when_one_channel_per_pe() {
        let s = default_schedule(2, 6, 6).unwrap();
        assert_eq!(s.folding_factor(), 1);
        assert_eq!(s.assignment, vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn every_pe_gets_exactly_f_channels_when_divisible() {
        let s = default_schedule(0, 64, 16).unwrap();
        let f = s.folding_factor();
        assert_eq!(f, 4);
        assert!(s.groups().iter().all(|g| g.len() == f));
        let total: usize = s.groups().iter().map(|g| g.len()).sum();
        assert_eq!(total, 64);
    }

    #[test]
    fn ragged_folding_reports_ceiling() {
        let s = default_schedule(0, 10, 4).unwrap();
        assert_eq!(s.folding_factor(), 3);
        let sizes: Vec<usize> = s.groups().iter().map(|g| g.len()).collect();
        assert_eq!(sizes, vec![3, 3, 2, 2]);
    }

    #[test]
    fn rejects_more_pes_than_channels() {
        assert!(default_schedule(0, 4, 5).is_err());
    }
}
