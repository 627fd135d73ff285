//! Text format of the synthetic running-sum task.
//!
//! Prompt: `Add: 3 5 2\n`. Each step writes one partial sum,
//! `Step 2: sum = 8.\n`, and the last step is `Answer: 10<eos>`.

pub const PROMPT_PREFIX: &str = "Add:";

pub fn render_prompt(numbers: &[i64]) -> String {
    let mut s = PROMPT_PREFIX.to_string();
    for n in numbers {
        s.push_str(&format!(" {n}"));
    }
    s.push('\n');
    s
}

pub fn parse_prompt(prompt: &str) -> Option<Vec<i64>> {
    let rest = prompt.trim().strip_prefix(PROMPT_PREFIX)?;
    let numbers: Option<Vec<i64>> = rest.split_whitespace().map(|w| w.parse().ok()).collect();
    numbers.filter(|n| !n.is_empty())
}

pub fn prefix_sums(numbers: &[i64]) -> Vec<i64> {
    numbers
        .iter()
        .scan(0, |acc, n| {
            *acc += n;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedStep {
    /// `Step {index}: sum = {value}.` (`total` is accepted for `sum`).
    Partial { index: usize, value: i64 },
    Answer(String),
    Other,
}

pub fn parse_step(text: &str) -> ParsedStep {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("Answer:") {
        return ParsedStep::Answer(rest.trim_end_matches("<eos>").trim().to_string());
    }
    let parsed = (|| {
        let rest = t.strip_prefix("Step")?;
        let (index, rest) = rest.split_once(':')?;
        let (label, value) = rest.split_once('=')?;
        if !matches!(label.trim(), "sum" | "total") {
            return None;
        }
        Some(ParsedStep::Partial {
            index: index.trim().parse().ok()?,
            value: value.trim().strip_suffix('.')?.trim().parse().ok()?,
        })
    })();
    parsed.unwrap_or(ParsedStep::Other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prompt_round_trip() {
        let p = render_prompt(&[3, 5, 2]);
        assert_eq!(p, "Add: 3 5 2\n");
        assert_eq!(parse_prompt(&p), Some(vec![3, 5, 2]));
        assert_eq!(parse_prompt("Add:\n"), None);
        assert_eq!(prefix_sums(&[3, 5, 2]), vec![3, 8, 10]);
    }

    #[test]
    fn steps() {
        assert_eq!(
            parse_step("Step 2: sum = 8.\n"),
            ParsedStep::Partial { index: 2, value: 8 }
        );
        assert_eq!(
            parse_step("Step 2: total = 9.\n"),
            ParsedStep::Partial { index: 2, value: 9 }
        );
        assert_eq!(parse_step("Answer: 10<eos>"), ParsedStep::Answer("10".into()));
        assert_eq!(parse_step("Step 2: sum = 8"), ParsedStep::Other);
    }
}
