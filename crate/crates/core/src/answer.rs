//! Final-answer extraction and normalization.

/// Canonical form used for grading and voting: trimmed, lower-cased,
/// internal whitespace collapsed, trailing punctuation stripped, and numeric
/// strings rewritten in shortest form (`"2.0"` becomes `"2"`).
pub fn normalize_answer(raw: &str) -> String {
    let collapsed = raw
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase();
    let stripped = collapsed
        .trim_end_matches(['.', ',', ';', ':', '!', '?'])
        .trim_end();
    canonical_number(stripped).unwrap_or_else(|| stripped.to_string())
}

fn canonical_number(s: &str) -> Option<String> {
    let looks_numeric = !s.is_empty()
        && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e'))
        && s.chars().any(|c| c.is_ascii_digit());
    if !looks_numeric {
        return None;
    }
    let value: f64 = s.parse().ok()?;
    if !value.is_finite() {
        return None;
    }
    if value == value.trunc() && value.abs() < 1e15 {
        Some(format!("{}", value as i64))
    } else {
        Some(format!("{value}"))
    }
}

/// Pulls the final answer out of a solution text: whatever follows the last
/// `Answer:` marker (case-insensitive) on its line, or else the last
/// non-empty line. Trailing terminal markers are removed first.
pub fn extract_answer(text: &str, terminal_markers: &[String]) -> String {
    let mut body = text.trim_end();
    loop {
        let before = body;
        for marker in terminal_markers.iter().filter(|m| !m.is_empty()) {
            body = body.strip_suffix(marker.as_str()).unwrap_or(body).trim_end();
        }
        if before == body {
            break;
        }
    }
    let lower = body.to_lowercase();
    if let Some(at) = lower.rfind("answer:") {
        let rest = &body[at + "answer:".len()..];
        return rest.lines().next().unwrap_or("").trim().to_string();
    }
    body.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("")
        .trim()
        .to_string()
}
