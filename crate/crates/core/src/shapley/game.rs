use rand::Rng;

use super::ClassUtility;
use crate::error::{Error, Result};

/// A scripted game: one utility vector per coalition bitmask.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularGame {
    players: usize,
    classes: usize,
    table: Vec<Vec<f64>>,
}

impl TabularGame {
    pub fn new(players: usize, classes: usize, table: Vec<Vec<f64>>) -> Result<Self> {
        if players >= 63 || table.len() != 1usize << players {
            return Err(Error::LengthMismatch {
                left: 1usize.checked_shl(players as u32).unwrap_or(0),
                right: table.len(),
            });
        }
        if let Some(row) = table.iter().find(|r| r.len() != classes) {
            return Err(Error::LengthMismatch {
                left: classes,
                right: row.len(),
            });
        }
        Ok(Self { players, classes, table })
    }

    pub fn constant(players: usize, classes: usize, value: f64) -> Self {
        Self {
            players,
            classes,
            table: vec![vec![value; classes]; 1 << players],
        }
    }

    /// Utilities drawn uniformly from `[0, 1)`, like class accuracies.
    pub fn random<R: Rng>(players: usize, classes: usize, rng: &mut R) -> Self {
        let table = (0..1usize << players)
            .map(|_| (0..classes).map(|_| rng.random::<f64>()).collect())
            .collect();
        Self { players, classes, table }
    }

    pub fn value(&self, mask: u64) -> &[f64] {
        &self.table[mask as usize]
    }

    /// Adds a player (the new last one) whose presence never changes the utility.
    pub fn with_null_player(&self) -> Self {
        let bit = 1u64 << self.players;
        let table = (0..bit << 1).map(|m| self.table[(m & !bit) as usize].clone()).collect();
        Self {
            players: self.players + 1,
            classes: self.classes,
            table,
        }
    }

    /// Adds a player (the new last one) interchangeable with `twin`.
    pub fn with_twin<R: Rng>(&self, twin: usize, rng: &mut R) -> Self {
        let twin_bit = 1u64 << twin;
        let new_bit = 1u64 << self.players;
        // Utility of coalitions holding both twins; anything goes as long as it only
        // depends on the other members.
        let both: Vec<Vec<f64>> = (0..1u64 << self.players)
            .map(|_| (0..self.classes).map(|_| rng.random::<f64>()).collect())
            .collect();
        let table = (0..new_bit << 1)
            .map(|m| {
                let rest = m & !twin_bit & !new_bit;
                match (m & twin_bit != 0, m & new_bit != 0) {
                    (false, false) => self.table[rest as usize].clone(),
                    (true, false) | (false, true) => self.table[(rest | twin_bit) as usize].clone(),
                    (true, true) => both[rest as usize].clone(),
                }
            })
            .collect();
        Self {
            players: self.players + 1,
            classes: self.classes,
            table,
        }
    }

    pub fn sum(&self, other: &TabularGame) -> Result<Self> {
        if self.players != other.players || self.classes != other.classes {
            return Err(Error::LengthMismatch {
                left: self.table.len(),
                right: other.table.len(),
            });
        }
        let table = self
            .table
            .iter()
            .zip(&other.table)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
            .collect();
        Ok(Self {
            players: self.players,
            classes: self.classes,
            table,
        })
    }
}

impl ClassUtility for TabularGame {
    fn num_players(&self) -> usize {
        self.players
    }

    fn num_classes(&self) -> usize {
        self.classes
    }

    fn utility(&self, coalition: &[usize]) -> Result<Vec<f64>> {
        let mut mask = 0u64;
        for &i in coalition {
            if i >= self.players {
                return Err(Error::ClientOutOfRange {
                    id: i,
                    num_clients: self.players,
                });
            }
            mask |= 1 << i;
        }
        Ok(self.table[mask as usize].clone())
    }
}
