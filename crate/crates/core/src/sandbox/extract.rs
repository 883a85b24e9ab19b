use crate::lang::Language;

/// A fenced block found in model output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FencedBlock<'a> {
    /// Lowercased first word of the info string; empty when untagged.
    pub tag: String,
    /// Interior text between the fences, a slice of the input.
    pub body: &'a str,
}

/// All ``` / ~~~ fenced blocks, in order. An unterminated final fence runs to
/// the end of the text.
pub fn fenced_blocks(text: &str) -> Vec<FencedBlock<'_>> {
    let mut blocks = Vec::new();
    let mut open: Option<(String, &str, usize)> = None;
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let trimmed = line.trim_start();
        let indent = line.len() - trimmed.len();
        let fence = if indent <= 3 && (trimmed.starts_with("```") || trimmed.starts_with("~~~")) {
            Some(&trimmed[..3])
        } else {
            None
        };
        match (&open, fence) {
            (None, Some(marker)) => {
                let info = trimmed.trim_start_matches(marker.chars().next().unwrap_or('`'));
                let tag = info
                    .split_whitespace()
                    .next()
                    .unwrap_or("")
                    .trim_matches(|c| c == '{' || c == '}' || c == '.')
                    .to_lowercase();
                open = Some((tag, marker, offset));
            }
            (Some((_, marker, _)), Some(m)) if *marker == m && trimmed.trim_end().chars().all(|c| c == m.chars().next().unwrap()) => {
                let (tag, _, body_start) = open.take().expect("open fence");
                blocks.push(FencedBlock {
                    tag,
                    body: &text[body_start..start],
                });
            }
            _ => {}
        }
    }
    if let Some((tag, _, body_start)) = open {
        blocks.push(FencedBlock {
            tag,
            body: &text[body_start.min(text.len())..],
        });
    }
    blocks
}

/// Code snippet from model output: the first block tagged with `language`,
/// else the first fenced block, else the whole text.
pub fn extract_code(raw_text: &str, language: Language) -> &str {
    let blocks = fenced_blocks(raw_text);
    let tags = language.fence_tags();
    blocks
        .iter()
        .find(|b| tags.contains(&b.tag.as_str()))
        .or_else(|| blocks.first())
        .map(|b| b.body)
        .unwrap_or(raw_text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tagged_block() {
        let t = "Sure!\n```python\ndef f():\n    return 1\n```\nDone.";
        assert_eq!(extract_code(t, Language::Python), "def f():\n    return 1\n");
    }

    #[test]
    fn no_fence_returns_text() {
        let t = "def f():\n    return 1";
        assert_eq!(extract_code(t, Language::Python), t);
    }

    #[test]
    fn matching_tag_beats_earlier_block() {
        let t = "Plan:\n```text\nstep 1\n```\nCode:\n```py\nprint(1)\n```\n```python\nprint(2)\n```\n";
        assert_eq!(extract_code(t, Language::Python), "print(1)\n");
        // no block tagged for Go: first block wins
        assert_eq!(extract_code(t, Language::Go), "step 1\n");
    }

    #[test]
    fn untagged_and_unterminated() {
        assert_eq!(extract_code("```\nx = 1\n```", Language::C), "x = 1\n");
        assert_eq!(extract_code("```cpp\nint x;\n", Language::Cpp), "int x;\n");
        assert_eq!(extract_code("```cpp", Language::Cpp), "");
    }

    #[test]
    fn nested_backticks_inside_tilde_fence() {
        let t = "~~~markdown\nuse ```js``` fences\n~~~\n";
        let blocks = fenced_blocks(t);
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].body, "use ```js``` fences\n");
    }

    #[test]
    fn extracted_code_is_substring() {
        for t in ["a\n```c\nint main(){}\n```", "```\n```", "plain", ""] {
            assert!(t.contains(extract_code(t, Language::C)));
        }
    }
}
