//! Extraction and validation of structured payloads from model replies.
//!
//! Replies routinely wrap the useful part in prose or markdown fences; the
//! helpers here pull out the first fenced block or the first balanced JSON
//! object. [`call_validated_json`] adds the bounded repair-retry loop every
//! agent uses: parse the reply, validate it, and on failure re-prompt with
//! the problems attached, up to a retry budget.

use crate::gateway::{GatewayError, LlmGateway, PromptRequest, Role};
use crate::templates::{self, TemplateSet};

#[derive(Debug, thiserror::Error)]
pub enum ValidatedCallError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("reply failed schema validation after {attempts} attempts: {}", problems.join("; "))]
    Schema { attempts: u32, problems: Vec<String> },
}

/// Issues `base_prompt`, parses the reply as JSON, and validates it via
/// `parse`. Invalid replies trigger a repair re-prompt carrying the
/// problems, up to `retry_budget` retries. Returns the parsed value and the
/// number of retries consumed.
#[allow(clippy::too_many_arguments)]
pub fn call_validated_json<T>(
    gateway: &LlmGateway,
    templates: &TemplateSet,
    role: Role,
    template_id: &str,
    schema_id: &str,
    base_prompt: &str,
    retry_budget: u32,
    mut parse: impl FnMut(&serde_json::Value) -> Result<T, Vec<String>>,
) -> Result<(T, u32), ValidatedCallError> {
    let mut problems: Vec<String> = Vec::new();
    for attempt in 0..=retry_budget {
        let prompt = if attempt == 0 {
            base_prompt.to_string()
        } else {
            let suffix = templates.render(
                templates::SCHEMA_REPAIR,
                &[
                    ("attempt", attempt.to_string().as_str()),
                    ("problems", problems.join("\n").as_str()),
                ],
            );
            format!("{base_prompt}{suffix}")
        };
        let request = PromptRequest::new(
            role,
            template_id,
            prompt,
            gateway.tokenizer().as_ref(),
            Some(schema_id),
        );
        let reply = gateway.complete(&request)?;
        match extract_json(&reply) {
            Some(value) => match parse(&value) {
                Ok(parsed) => return Ok((parsed, attempt)),
                Err(p) => problems = p,
            },
            None => problems = vec!["reply does not contain a JSON document".to_string()],
        }
    }
    Err(ValidatedCallError::Schema {
        attempts: retry_budget + 1,
        problems,
    })
}

/// Deserializes a JSON value into a typed schema, mapping errors into
/// repair-loop problems.
pub fn parse_into<T: serde::de::DeserializeOwned>(
    value: &serde_json::Value,
) -> Result<T, Vec<String>> {
    serde_json::from_value(value.clone()).map_err(|e| vec![format!("schema mismatch: {e}")])
}

/// Extracts the code payload from a reply: the body of the first fenced
/// block when one is present, otherwise the whole trimmed reply. Returns
/// `None` when nothing non-empty remains.
pub fn extract_code(reply: &str) -> Option<String> {
    if let Some(block) = first_fenced_block(reply) {
        if block.trim().is_empty() {
            return None;
        }
        return Some(block);
    }
    let trimmed = reply.trim();
    if trimmed.is_empty() {
        None
    } else {
        Some(format!("{trimmed}\n"))
    }
}

/// Extracts a JSON document from a reply: tries the whole text, then the
/// first fenced block, then the first balanced `{...}` region.
pub fn extract_json(reply: &str) -> Option<serde_json::Value> {
    let trimmed = reply.trim();
    if let Ok(value) = serde_json::from_str(trimmed) {
        return Some(value);
    }
    if let Some(block) = first_fenced_block(reply) {
        if let Ok(value) = serde_json::from_str(block.trim()) {
            return Some(value);
        }
    }
    balanced_object(trimmed).and_then(|s| serde_json::from_str(s).ok())
}

/// Body of the first ``` or ~~~ fenced block, excluding the fence lines.
fn first_fenced_block(text: &str) -> Option<String> {
    let mut lines = text.lines();
    let mut fence: Option<&str> = None;
    for line in lines.by_ref() {
        let t = line.trim_start();
        if t.starts_with("```") {
            fence = Some("```");
            break;
        }
        if t.starts_with("~~~") {
            fence = Some("~~~");
            break;
        }
    }
    let fence = fence?;
    let mut body = String::new();
    for line in lines {
        if line.trim_start().starts_with(fence) {
            return Some(body);
        }
        body.push_str(line);
        body.push('\n');
    }
    // Unterminated fence: take everything to the end.
    Some(body)
}

fn balanced_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (offset, c) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + offset + c.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_prefers_fenced_block() {
        let reply = "Here is the file:\n```python\nprint('hi')\n```\nDone.";
        assert_eq!(extract_code(reply).unwrap(), "print('hi')\n");
    }

    #[test]
    fn code_falls_back_to_raw_reply() {
        assert_eq!(extract_code("x = 1").unwrap(), "x = 1\n");
        assert!(extract_code("   \n").is_none());
        assert!(extract_code("```\n\n```").is_none());
    }

    #[test]
    fn json_from_prose_and_fence() {
        let fenced = "reply:\n```json\n{\"a\": 1}\n```";
        assert_eq!(extract_json(fenced).unwrap()["a"], 1);
        let inline = "the schema is {\"b\": {\"c\": 2}} as requested";
        assert_eq!(extract_json(inline).unwrap()["b"]["c"], 2);
        assert!(extract_json("no json here").is_none());
    }

    #[test]
    fn json_ignores_braces_inside_strings() {
        let tricky = "note {\"k\": \"a } b\"} end";
        assert_eq!(extract_json(tricky).unwrap()["k"], "a } b");
    }
}
