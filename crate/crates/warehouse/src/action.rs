use serde::{Deserialize, Serialize};

use morl_core::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Source,
    Destination,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StationKind {
    Human,
    Robot,
}

/// Decision for the tote under the cursor. With `ignore` set the role and
/// station are carried along but have no effect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub ignore: bool,
    pub role: Role,
    pub station: StationKind,
}

impl Action {
    pub const IGNORE: Action = Action { ignore: true, role: Role::Source, station: StationKind::Human };

    pub fn assign(role: Role, station: StationKind) -> Self {
        Action { ignore: false, role, station }
    }

    /// `ignore * 4 + role * 2 + station`.
    pub fn index(self) -> usize {
        (self.ignore as usize) * 4 + (self.role == Role::Destination) as usize * 2 + (self.station == StationKind::Robot) as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= 8 {
            return Err(Error::InvalidAction { action: index, n_actions: 8 });
        }
        let role = if index & 2 != 0 { Role::Destination } else { Role::Source };
        let station = if index & 1 != 0 { StationKind::Robot } else { StationKind::Human };
        Ok(Action { ignore: index & 4 != 0, role, station })
    }

    /// Decodes an index of the collapsed space: `0..4` assign as in the full
    /// space, 4 ignores.
    pub fn from_collapsed(index: usize) -> Result<Self> {
        match index {
            0..=3 => Action::from_index(index),
            4 => Ok(Action::IGNORE),
            _ => Err(Error::InvalidAction { action: index, n_actions: 5 }),
        }
    }

    /// Index in the collapsed space.
    pub fn collapsed(self) -> usize {
        if self.ignore {
            4
        } else {
            self.index()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        for i in 0..8 {
            assert_eq!(Action::from_index(i).unwrap().index(), i);
        }
        assert!(Action::from_index(8).is_err());
        assert_eq!(Action::assign(Role::Destination, StationKind::Robot).index(), 3);
        assert_eq!(Action::IGNORE.index(), 4);
    }

    #[test]
    fn ignore_aliases_collapse() {
        for i in 4..8 {
            assert_eq!(Action::from_index(i).unwrap().collapsed(), 4);
        }
        for i in 0..5 {
            assert_eq!(Action::from_collapsed(i).unwrap().collapsed(), i);
        }
        assert!(Action::from_collapsed(5).is_err());
    }
}
