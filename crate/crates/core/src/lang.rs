use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Programming languages the pipeline can generate and execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Python,
    Java,
    Javascript,
    C,
    Cpp,
    Go,
    Typescript,
}

impl Language {
    pub const ALL: [Language; 7] = [
        Language::Python,
        Language::Java,
        Language::Javascript,
        Language::C,
        Language::Cpp,
        Language::Go,
        Language::Typescript,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Language::Python => "python",
            Language::Java => "java",
            Language::Javascript => "javascript",
            Language::C => "c",
            Language::Cpp => "cpp",
            Language::Go => "go",
            Language::Typescript => "typescript",
        }
    }

    /// Human-readable name used inside prompts.
    pub fn display_name(self) -> &'static str {
        match self {
            Language::Python => "Python",
            Language::Java => "Java",
            Language::Javascript => "JavaScript",
            Language::C => "C",
            Language::Cpp => "C++",
            Language::Go => "Go",
            Language::Typescript => "TypeScript",
        }
    }

    /// Source file extension, without the dot.
    pub fn extension(self) -> &'static str {
        match self {
            Language::Python => "py",
            Language::Java => "java",
            Language::Javascript => "js",
            Language::C => "c",
            Language::Cpp => "cpp",
            Language::Go => "go",
            Language::Typescript => "ts",
        }
    }

    /// Info-string tags that mark a fenced block as belonging to this language.
    pub fn fence_tags(self) -> &'static [&'static str] {
        match self {
            Language::Python => &["python", "py", "python3"],
            Language::Java => &["java"],
            Language::Javascript => &["javascript", "js", "node"],
            Language::C => &["c"],
            Language::Cpp => &["cpp", "c++", "cxx", "cc"],
            Language::Go => &["go", "golang"],
            Language::Typescript => &["typescript", "ts"],
        }
    }

    pub fn uses_braces(self) -> bool {
        !matches!(self, Language::Python)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        Language::ALL
            .into_iter()
            .find(|l| l.as_str() == lower || l.fence_tags().contains(&lower.as_str()))
            .ok_or_else(|| format!("unknown language `{s}`"))
    }
}
