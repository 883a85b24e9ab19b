use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Error classes injected into teacher-faulty solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FaultKind {
    Syntax,
    Logical,
    Type,
    Name,
    Timeout,
}

impl FaultKind {
    pub const ALL: [FaultKind; 5] = [
        FaultKind::Syntax,
        FaultKind::Logical,
        FaultKind::Type,
        FaultKind::Name,
        FaultKind::Timeout,
    ];

    pub fn title(self) -> &'static str {
        match self {
            FaultKind::Syntax => "Syntax Error",
            FaultKind::Logical => "Logical Error",
            FaultKind::Type => "Type Error",
            FaultKind::Name => "Name Error",
            FaultKind::Timeout => "Timeout Error",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            FaultKind::Syntax => {
                "Violations of programming language grammar, such as unmatched parentheses or misspelled keywords."
            }
            FaultKind::Logical => {
                "Misunderstandings of the problem that lead to incorrect outcomes even though the code runs."
            }
            FaultKind::Type => {
                "Inappropriate operations on objects of incorrect types, such as concatenating strings directly with integers."
            }
            FaultKind::Name => "Use of variables or functions that have not been defined.",
            FaultKind::Timeout => {
                "Creation of infinite loops due to conditions that can never be fulfilled, potentially making the code stuck."
            }
        }
    }

    /// `"<Title>: <description>"`.
    pub fn definition(self) -> String {
        format!("{}: {}", self.title(), self.description())
    }

    /// Uniform choice over the five kinds.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> FaultKind {
        FaultKind::ALL[rng.gen_range(0..FaultKind::ALL.len())]
    }
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.title())
    }
}

/// Numbered listing of the whole taxonomy, one kind per line.
pub fn taxonomy_listing() -> String {
    FaultKind::ALL
        .iter()
        .enumerate()
        .map(|(i, k)| format!("{}. {}", i + 1, k.definition()))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One criterion of the solution-scoring rubric.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RubricCriterion {
    pub name: &'static str,
    pub points: u8,
    pub check: &'static str,
}

pub const RUBRIC: [RubricCriterion; 5] = [
    RubricCriterion {
        name: "Basic Functionality",
        points: 2,
        check: "Check if the solution has obvious bugs (such as syntax and logical errors) and provides a basic attempt to solve the programming question.",
    },
    RubricCriterion {
        name: "Boundary Check",
        points: 1,
        check: "Check if the solution includes necessary boundary checks, ensuring that the code behaves correctly under different scenarios and input ranges.",
    },
    RubricCriterion {
        name: "Requirement Coverage",
        points: 1,
        check: "Check if the solution satisfies all requirements outlined in the question and successfully addresses the core requirements.",
    },
    RubricCriterion {
        name: "Readability and Documentation",
        points: 1,
        check: "Check the readability of the solution, where the key part should have detailed comments for ease of understanding for other developers.",
    },
    RubricCriterion {
        name: "Coding Practices",
        points: 1,
        check: "Check for efficiency, error handling, and scalability in the solution, which reflects best coding practices.",
    },
];

pub fn rubric_listing() -> String {
    RUBRIC
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let unit = if c.points == 1 { "Point" } else { "Points" };
            format!("{}. {} ({} {unit}): {}", i + 1, c.name, c.points, c.check)
        })
        .collect::<Vec<_>>()
        .join("\n")
}
