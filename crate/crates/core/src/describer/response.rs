use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriberResponse {
    pub short_form: String,
    pub long_form_before: String,
    pub long_form_after: String,
}

impl DescriberResponse {
    pub fn is_goal_form(&self) -> bool {
        self.long_form_before.is_empty() && self.long_form_after.is_empty()
    }
}

struct Labels {
    short: Regex,
    before: Regex,
    after: Regex,
    answer: Regex,
}

fn labels() -> &'static Labels {
    static L: OnceLock<Labels> = OnceLock::new();
    L.get_or_init(|| Labels {
        short: Regex::new(r"(?im)^[\s*\-]*short form response\s*:[ \t]*(.*)$").unwrap(),
        before: Regex::new(r"(?im)^[\s*\-]*long form response\s*\(\s*before revision\s*\)\s*:[ \t]*(.*)$").unwrap(),
        after: Regex::new(r"(?im)^[\s*\-]*long form response\s*\(\s*after revision\s*\)\s*:[ \t]*(.*)$").unwrap(),
        answer: Regex::new(r"(?im)^[\s*\-]*answer\s*:[ \t]*(\S.*)$").unwrap(),
    })
}

fn capture(re: &Regex, text: &str) -> Option<String> {
    re.captures(text).map(|c| c[1].trim().to_string())
}

/// Extracts the labeled fields of a model reply. A reply with none of the
/// three labels but an `Answer: ...` line is read as a goal answer.
pub fn parse_response(text: &str) -> Result<DescriberResponse> {
    let l = labels();
    let fields = [capture(&l.short, text), capture(&l.before, text), capture(&l.after, text)];
    let parse_err = |reason: &str| Error::Parse { reason: reason.to_string(), raw: text.to_string() };

    if fields.iter().all(Option::is_none) {
        return match capture(&l.answer, text) {
            Some(goal) => Ok(DescriberResponse { short_form: goal, ..Default::default() }),
            None => Err(parse_err("no answer labels found")),
        };
    }
    match fields {
        [Some(s), Some(b), Some(a)] if !s.is_empty() && !b.is_empty() && !a.is_empty() => {
            Ok(DescriberResponse { short_form: s, long_form_before: b, long_form_after: a })
        }
        _ => Err(parse_err("reply is missing or leaves empty one of the three labeled responses")),
    }
}

/// Renders a response in the output shape the prompts request.
pub fn format_response(r: &DescriberResponse) -> String {
    if r.is_goal_form() {
        format!("Answer: {}", r.short_form)
    } else {
        format!(
            "Answer:\nshort form response: {}\nlong form response (before revision): {}\nlong form response (after revision): {}",
            r.short_form, r.long_form_before, r.long_form_after
        )
    }
}
