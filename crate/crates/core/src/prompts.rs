//! Setwise prompt rendering.
//!
//! Two prompt modes share one candidate block: [`PromptMode::RankR1`] asks the
//! model to reason inside `<think>` before answering, [`PromptMode::SetwisePlain`]
//! asks for the answer span only.

use serde::{Deserialize, Serialize};

use crate::corpus_io::{Document, Query};
use crate::error::PromptError;

/// Largest candidate set one prompt can present.
pub const MAX_CANDIDATES: usize = 20;

const RANK_R1_SYSTEM: &str = "A conversation between User and Assistant. The user asks a question, \
and the Assistant solves it. The assistant first thinks about the reasoning process in the mind and \
then provides the user with the answer. The reasoning process and answer are enclosed within \
<think> </think> and <answer> </answer> tags, respectively, i.e., <think> reasoning process here \
</think> <answer> answer here </answer>.";

const SETWISE_SYSTEM: &str = "A conversation between User and Assistant. The user asks a question, \
and the Assistant solves it. The assistant provides the user with the answer enclosed within \
<answer> </answer> tags, i.e., <answer> answer here </answer>.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptMode {
    /// Reason in `<think>`, then answer in `<answer>`.
    RankR1,
    /// Answer only.
    #[serde(rename = "setwise")]
    SetwisePlain,
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rank-r1" | "rankr1" => Ok(PromptMode::RankR1),
            "setwise" | "setwise-plain" => Ok(PromptMode::SetwisePlain),
            other => Err(format!("unknown prompt mode `{other}` (expected rank-r1 or setwise)")),
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PromptMode::RankR1 => "rank-r1",
            PromptMode::SetwisePlain => "setwise",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetUnit {
    /// Unicode scalar values.
    #[default]
    Chars,
    /// Whitespace-separated tokens.
    Words,
}

impl BudgetUnit {
    pub fn measure(self, text: &str) -> usize {
        match self {
            BudgetUnit::Chars => text.chars().count(),
            BudgetUnit::Words => text.split_whitespace().count(),
        }
    }
}

impl std::str::FromStr for BudgetUnit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "chars" => Ok(BudgetUnit::Chars),
            "words" => Ok(BudgetUnit::Words),
            other => Err(format!("unknown budget unit `{other}` (expected chars or words)")),
        }
    }
}

/// Total size limit for the system plus user text of one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBudget {
    pub max_units: usize,
    pub unit: BudgetUnit,
}

impl PromptBudget {
    pub fn chars(max_units: usize) -> Self {
        Self {
            max_units,
            unit: BudgetUnit::Chars,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub mode: PromptMode,
    pub system: String,
    pub user: String,
    pub candidate_count: usize,
    /// `label_order[k - 1]` is the document shown as `[k]`.
    pub label_order: Vec<String>,
}

impl RenderedPrompt {
    pub fn size(&self, unit: BudgetUnit) -> usize {
        unit.measure(&self.system) + unit.measure(&self.user)
    }
}

/// Returns the longest prefix of `text` holding at most `max_units` units.
/// Word mode keeps the original whitespace between kept tokens.
pub fn truncate_document(text: &str, max_units: usize, unit: BudgetUnit) -> &str {
    match unit {
        BudgetUnit::Chars => match text.char_indices().nth(max_units) {
            Some((byte, _)) => &text[..byte],
            None => text,
        },
        BudgetUnit::Words => {
            if max_units == 0 {
                return "";
            }
            let mut seen = 0;
            let mut in_word = false;
            for (byte, ch) in text.char_indices() {
                if ch.is_whitespace() {
                    if in_word && seen == max_units {
                        return &text[..byte];
                    }
                    in_word = false;
                } else if !in_word {
                    in_word = true;
                    seen += 1;
                }
            }
            text
        }
    }
}

fn ordinal(label: usize) -> &'static str {
    match label {
        1 => "first",
        3 => "third",
        _ => unreachable!("example label is always 1 or 3"),
    }
}

fn system_text(mode: PromptMode) -> &'static str {
    match mode {
        PromptMode::RankR1 => RANK_R1_SYSTEM,
        PromptMode::SetwisePlain => SETWISE_SYSTEM,
    }
}

fn instruction(mode: PromptMode, candidate_count: usize) -> String {
    let label = if candidate_count >= 3 { 3 } else { 1 };
    let which = ordinal(label);
    match mode {
        PromptMode::RankR1 => format!(
            "After completing the reasoning process, please provide only the label of the most \
relevant document to the query, enclosed in square brackets, within the answer tags. For example, \
if the {which} document is the most relevant, the answer should be: <think> reasoning process here \
</think> <answer>[{label}]</answer>."
        ),
        PromptMode::SetwisePlain => format!(
            "Please provide only the label of the most relevant document to the query, enclosed in \
square brackets, within the answer tags. For example, if the {which} document is the most \
relevant, the answer should be: <answer>[{label}]</answer>."
        ),
    }
}

fn render_user<'a>(query: &str, texts: impl ExactSizeIterator<Item = &'a str>, mode: PromptMode) -> String {
    let count = texts.len();
    let mut user = format!("Given the query: \"{query}\", which of the following documents is most relevant?\n");
    for (i, text) in texts.enumerate() {
        user.push_str(&format!("[{}] {}\n", i + 1, text));
    }
    user.push('\n');
    user.push_str(&instruction(mode, count));
    user
}

/// Units the prompt costs with every document text left empty.
pub fn template_overhead(query: &Query, candidate_count: usize, mode: PromptMode, unit: BudgetUnit) -> usize {
    let empty = std::iter::repeat_n("", candidate_count);
    unit.measure(system_text(mode)) + unit.measure(&render_user(&query.text, empty, mode))
}

/// Per-document allocation: floor((budget - template overhead) / candidate count).
pub fn per_document_allocation(
    query: &Query,
    candidate_count: usize,
    mode: PromptMode,
    budget: PromptBudget,
) -> Result<usize, PromptError> {
    let overhead = template_overhead(query, candidate_count, mode, budget.unit);
    let per_doc = budget.max_units.saturating_sub(overhead) / candidate_count.max(1);
    if per_doc == 0 {
        return Err(PromptError::BudgetTooSmall {
            budget: budget.max_units,
            overhead,
        });
    }
    Ok(per_doc)
}

/// Renders the setwise prompt asking for the most relevant of `candidates`.
/// With a budget, every document is cut to the same per-document allocation
/// so the whole prompt fits.
pub fn build_prompt(
    query: &Query,
    candidates: &[&Document],
    mode: PromptMode,
    budget: Option<PromptBudget>,
) -> Result<RenderedPrompt, PromptError> {
    if query.text.trim().is_empty() {
        return Err(PromptError::EmptyQuery);
    }
    match candidates.len() {
        0 => return Err(PromptError::NoCandidates),
        n if n > MAX_CANDIDATES => return Err(PromptError::TooManyCandidates(n)),
        _ => {}
    }
    let limit = budget
        .map(|b| per_document_allocation(query, candidates.len(), mode, b).map(|n| (n, b.unit)))
        .transpose()?;
    let texts = candidates.iter().map(|d| match limit {
        Some((n, unit)) => truncate_document(&d.text, n, unit),
        None => d.text.as_str(),
    });
    Ok(RenderedPrompt {
        mode,
        system: system_text(mode).to_string(),
        user: render_user(&query.text, texts, mode),
        candidate_count: candidates.len(),
        label_order: candidates.iter().map(|d| d.id.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> Document {
        Document {
            id: id.into(),
            text: text.into(),
        }
    }

    fn query(text: &str) -> Query {
        Query {
            id: "q".into(),
            text: text.into(),
        }
    }

    fn candidate_lines(user: &str) -> Vec<&str> {
        user.lines().skip(1).take_while(|l| !l.is_empty()).collect()
    }

    #[test]
    fn two_candidates_rank_r1() {
        let docs = [doc("a", "alpha"), doc("b", "beta")];
        let refs: Vec<&Document> = docs.iter().collect();
        let p = build_prompt(&query("q"), &refs, PromptMode::RankR1, None).unwrap();
        assert!(p.user.contains("[1] alpha\n[2] beta\n"));
        assert!(p.user.contains("provide only the label of the most relevant document"));
        assert!(p.system.contains("<think> </think> and <answer> </answer>"));
        assert_eq!(p.label_order, ["a", "b"]);
        assert_eq!(p.candidate_count, 2);
    }

    #[test]
    fn rank_r1_prompt_matches_template_verbatim() {
        let docs: Vec<Document> = (1..=3).map(|i| doc(&format!("d{i}"), &format!("text {i}"))).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let p = build_prompt(&query("common minerals list"), &refs, PromptMode::RankR1, None).unwrap();
        assert_eq!(
            p.system,
            "A conversation between User and Assistant. The user asks a question, and the Assistant \
solves it. The assistant first thinks about the reasoning process in the mind and then provides the \
user with the answer. The reasoning process and answer are enclosed within <think> </think> and \
<answer> </answer> tags, respectively, i.e., <think> reasoning process here </think> <answer> answer \
here </answer>."
        );
        assert_eq!(
            p.user,
            "Given the query: \"common minerals list\", which of the following documents is most relevant?\n\
[1] text 1\n[2] text 2\n[3] text 3\n\n\
After completing the reasoning process, please provide only the label of the most relevant document \
to the query, enclosed in square brackets, within the answer tags. For example, if the third document \
is the most relevant, the answer should be: <think> reasoning process here </think> <answer>[3]</answer>."
        );
    }

    #[test]
    fn setwise_prompt_matches_template_verbatim() {
        let docs: Vec<Document> = (1..=4).map(|i| doc(&format!("d{i}"), "x")).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let p = build_prompt(&query("q"), &refs, PromptMode::SetwisePlain, None).unwrap();
        assert_eq!(
            p.system,
            "A conversation between User and Assistant. The user asks a question, and the Assistant \
solves it. The assistant provides the user with the answer enclosed within <answer> </answer> tags, \
i.e., <answer> answer here </answer>."
        );
        assert!(p.user.ends_with(
            "\n\nPlease provide only the label of the most relevant document to the query, enclosed in \
square brackets, within the answer tags. For example, if the third document is the most relevant, the \
answer should be: <answer>[3]</answer>."
        ));
        assert!(!p.system.contains("<think>"));
    }

    #[test]
    fn single_candidate_clamps_example_label() {
        let d = doc("only", "solo text");
        for mode in [PromptMode::RankR1, PromptMode::SetwisePlain] {
            let p = build_prompt(&query("q"), &[&d], mode, None).unwrap();
            assert_eq!(p.label_order, ["only"]);
            assert_eq!(candidate_lines(&p.user), ["[1] solo text"]);
            assert!(p.user.contains("if the first document is the most relevant"));
            assert!(p.user.contains("<answer>[1]</answer>."));
        }
    }

    #[test]
    fn candidate_count_bounds() {
        let docs: Vec<Document> = (0..21).map(|i| doc(&i.to_string(), "t")).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        assert_eq!(
            build_prompt(&query("q"), &refs, PromptMode::RankR1, None).unwrap_err(),
            PromptError::TooManyCandidates(21)
        );
        assert_eq!(
            build_prompt(&query("q"), &[], PromptMode::RankR1, None).unwrap_err(),
            PromptError::NoCandidates
        );
        assert_eq!(
            build_prompt(&query("  "), &refs[..2], PromptMode::RankR1, None).unwrap_err(),
            PromptError::EmptyQuery
        );
    }

    #[test]
    fn candidate_block_identical_across_modes() {
        let docs: Vec<Document> = (0..7).map(|i| doc(&i.to_string(), &format!("doc body {i}"))).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let a = build_prompt(&query("q"), &refs, PromptMode::RankR1, None).unwrap();
        let b = build_prompt(&query("q"), &refs, PromptMode::SetwisePlain, None).unwrap();
        let block = |u: &str| u.split("\n\n").next().unwrap().to_string();
        assert_eq!(block(&a.user), block(&b.user));
        assert_ne!(a.user, b.user);
    }

    #[test]
    fn truncation_is_prefix() {
        assert_eq!(truncate_document("abcdef", 3, BudgetUnit::Chars), "abc");
        assert_eq!(truncate_document("ab", 10, BudgetUnit::Chars), "ab");
        assert_eq!(truncate_document("héllo wörld", 2, BudgetUnit::Chars), "hé");
        assert_eq!(truncate_document("one  two three", 2, BudgetUnit::Words), "one  two");
        assert_eq!(truncate_document("  one two ", 5, BudgetUnit::Words), "  one two ");
        assert_eq!(truncate_document("one two", 0, BudgetUnit::Words), "");
    }

    #[test]
    fn budget_allocation_matches_arithmetic() {
        let q = query("what is mica");
        let docs: Vec<Document> = (0..20).map(|i| doc(&i.to_string(), &"m".repeat(400))).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let budget = PromptBudget::chars(4096);
        // Fixed template cost computed by hand: system text, header line, twenty
        // `[k] \n` lines, the blank line and the instruction sentence.
        let header = "Given the query: \"what is mica\", which of the following documents is most relevant?\n";
        let labels: usize = (1..=20).map(|k| format!("[{k}] \n").len()).sum();
        let instruction_len = "After completing the reasoning process, please provide only the label of \
the most relevant document to the query, enclosed in square brackets, within the answer tags. For \
example, if the third document is the most relevant, the answer should be: <think> reasoning process \
here </think> <answer>[3]</answer>."
            .len();
        let overhead = RANK_R1_SYSTEM.len() + header.len() + labels + 1 + instruction_len;
        assert_eq!(
            template_overhead(&q, 20, PromptMode::RankR1, BudgetUnit::Chars),
            overhead
        );
        let per_doc = (4096 - overhead) / 20;
        assert_eq!(
            per_document_allocation(&q, 20, PromptMode::RankR1, budget).unwrap(),
            per_doc
        );

        let p = build_prompt(&q, &refs, PromptMode::RankR1, Some(budget)).unwrap();
        assert!(p.size(BudgetUnit::Chars) <= 4096);
        assert_eq!(p.size(BudgetUnit::Chars), overhead + 20 * per_doc);
        for (k, line) in candidate_lines(&p.user).iter().enumerate() {
            assert_eq!(*line, format!("[{}] {}", k + 1, "m".repeat(per_doc)));
        }
    }

    #[test]
    fn word_budget_fits() {
        let q = query("q");
        let docs: Vec<Document> = (0..20)
            .map(|i| doc(&i.to_string(), &"lorem ipsum dolor ".repeat(50)))
            .collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let budget = PromptBudget {
            max_units: 1000,
            unit: BudgetUnit::Words,
        };
        let p = build_prompt(&q, &refs, PromptMode::SetwisePlain, Some(budget)).unwrap();
        assert!(p.size(BudgetUnit::Words) <= 1000);
    }

    #[test]
    fn tiny_budget_rejected() {
        let d = doc("a", "text");
        let err = build_prompt(
            &query("q"),
            &[&d, &d],
            PromptMode::RankR1,
            Some(PromptBudget::chars(50)),
        )
        .unwrap_err();
        assert!(matches!(err, PromptError::BudgetTooSmall { budget: 50, .. }));
    }

    #[test]
    fn rendering_is_deterministic() {
        let docs: Vec<Document> = (0..5).map(|i| doc(&i.to_string(), "body")).collect();
        let refs: Vec<&Document> = docs.iter().collect();
        let a = build_prompt(&query("q"), &refs, PromptMode::RankR1, Some(PromptBudget::chars(2000))).unwrap();
        let b = build_prompt(&query("q"), &refs, PromptMode::RankR1, Some(PromptBudget::chars(2000))).unwrap();
        assert_eq!(a, b);
    }
}
