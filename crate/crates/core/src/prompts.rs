//! Prompt templates and per-domain annotation guidelines.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Code,
    Math,
    Logic,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Code, Domain::Math, Domain::Logic];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Code => "code",
            Domain::Math => "math",
            Domain::Logic => "logic",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
#[error("unknown domain {0:?} (expected code, math or logic)")]
pub struct UnknownDomain(pub String);

impl FromStr for Domain {
    type Err = UnknownDomain;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "code" => Ok(Domain::Code),
            "math" => Ok(Domain::Math),
            "logic" => Ok(Domain::Logic),
            _ => Err(UnknownDomain(s.to_string())),
        }
    }
}

/// Header line that starts the answer-format block of every judgment prompt.
pub const ANSWER_FORMAT_HEADER: &str = "## Answer format";

/// Appended to every judgment prompt: free-form analysis, then one final line.
pub const ANSWER_FORMAT: &str = "## Answer format\n\
First analyze both texts with respect to the criterion. Then finish with a \
single line `FINAL: A`, `FINAL: B`, or `FINAL: NULL`. Answer NULL if the \
criterion does not apply to this pair or both texts are of comparable quality \
under it.";

/// Relevance question used to narrow the knowledge base to a domain.
pub fn relevance(domain: Domain, name: &str, description: &str) -> String {
    match domain {
        Domain::Code => format!(
            "# Instruction\nIs this criterion applicable for evaluating the quality of Python code?\n\n\
             # Criterion\n{name}: {description}\n\nYou should simply reply 'yes' or 'no'."
        ),
        Domain::Math => format!(
            "Is the following criterion applicable to measure the mathematical quality of text data?\n\n\
             ### Criterion\n*{name}*: {description}\n\nYou should simply reply 'yes' or 'no'."
        ),
        Domain::Logic => format!(
            "# Instruction\nIs the following criterion applicable to evaluate the logical quality of text data?\n\n\
             # Criterion\n{name}: {description}\n\nYou should simply reply 'yes' or 'no'."
        ),
    }
}

/// Worker prompt comparing texts A and B under one criterion.
pub fn judgment(domain: Domain, name: &str, description: &str, a: &str, b: &str) -> String {
    let body = match domain {
        Domain::Code => format!(
            "## Instruction\nGiven criterion **{name}**, compare two Python code files and determine \
             which one human annotators will consider to be of higher quality.\n\n\
             ## A\n{a}\n\n## B\n{b}\n\n# Criterion\n**{name}**: {description}"
        ),
        Domain::Math => format!(
            "## Instruction\nGiven criterion **{name}**, evaluate and determine which of the two text \
             data is of higher quality in mathematics.\n\n\
             [DATA_A]\n{a}\n[/DATA_A]\n\n[DATA_B]\n{b}\n[/DATA_B]\n\n# Criterion\n**{name}**: {description}"
        ),
        Domain::Logic => format!(
            "Which text piece of A and B is more logical based on **{name}**?\n\n\
             {name}: {description}\n\n[A]\n{a}\n[/A]\n\n[B]\n{b}\n[/B]"
        ),
    };
    format!("{body}\n\n{ANSWER_FORMAT}")
}

/// The two texts and the criterion recovered from a [`judgment`] prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct JudgmentParts<'a> {
    pub name: &'a str,
    pub description: &'a str,
    pub a: &'a str,
    pub b: &'a str,
}

/// Inverse of [`judgment`], for offline providers that need to see the texts.
pub fn parse_judgment(domain: Domain, prompt: &str) -> Option<JudgmentParts<'_>> {
    let body = prompt.strip_suffix(ANSWER_FORMAT)?.strip_suffix("\n\n")?;
    match domain {
        Domain::Code => {
            let ia = body.find("\n\n## A\n")? + 7;
            let ib = ia + body[ia..].find("\n\n## B\n")?;
            const CRIT: &str = "\n\n# Criterion\n**";
            let ic = ib + 7 + body[ib + 7..].rfind(CRIT)?;
            let (name, description) = split_name_desc(&body[ic + CRIT.len()..], "**: ")?;
            Some(JudgmentParts {
                name,
                description,
                a: &body[ia..ib],
                b: &body[ib + 7..ic],
            })
        }
        Domain::Math => {
            let ia = body.find("[DATA_A]\n")? + 9;
            let ja = ia + body[ia..].find("\n[/DATA_A]")?;
            let ib = ja + body[ja..].find("[DATA_B]\n")? + 9;
            let jb = ib + body[ib..].rfind("\n[/DATA_B]")?;
            let ic = jb + body[jb..].find("# Criterion\n**")? + 14;
            let (name, description) = split_name_desc(&body[ic..], "**: ")?;
            Some(JudgmentParts {
                name,
                description,
                a: &body[ia..ja],
                b: &body[ib..jb],
            })
        }
        Domain::Logic => {
            let i0 = body.find("based on **")? + 11;
            let j0 = i0 + body[i0..].find("**?\n\n")?;
            let name = &body[i0..j0];
            let id = j0 + 5 + name.len() + 2;
            let jd = id + body.get(id..)?.find("\n\n[A]\n")?;
            let ia = jd + 6;
            let ja = ia + body[ia..].find("\n[/A]\n\n[B]\n")?;
            let ib = ja + 11;
            let jb = body.len().checked_sub(5)?;
            (body.get(jb..)? == "\n[/B]").then_some(())?;
            Some(JudgmentParts {
                name,
                description: &body[id..jd],
                a: &body[ia..ja],
                b: &body[ib..jb],
            })
        }
    }
}

fn split_name_desc<'a>(s: &'a str, sep: &str) -> Option<(&'a str, &'a str)> {
    let i = s.find(sep)?;
    Some((&s[..i], &s[i + sep.len()..]))
}

/// Header shared by every criteria-proposal prompt.
pub const PROPOSE_HEADER: &str = "# Task: propose criteria";
/// Header of the per-mistake analysis prompt.
pub const ANALYZE_HEADER: &str = "# Task: analyze mistake";
/// Header of the description refinement prompt.
pub const REFINE_HEADER: &str = "# Task: refine criterion";

fn initial_request(domain: Domain, count: usize) -> String {
    match domain {
        Domain::Code => format!(
            "List and describe {count} criteria on how human compare the overall quality of two Python code files."
        ),
        Domain::Math => format!(
            "List and describe {count} criteria on evaluating whether a text data is high quality math data."
        ),
        Domain::Logic => format!(
            "List and describe {count} criteria to tell which is more logical of two text pieces."
        ),
    }
}

/// Manager prompt asking for `count` new criteria, avoiding `excluded` names.
pub fn propose(domain: Domain, count: usize, excluded: &[String]) -> String {
    let mut s = format!(
        "{PROPOSE_HEADER}\n{}\n\nReply with a JSON object mapping each criterion name (a short \
         snake_case phrase) to its description:\n```json\n{{\"name_of_the_criterion\": \
         \"description_of_the_criterion\", ...}}\n```",
        initial_request(domain, count)
    );
    if !excluded.is_empty() {
        s.push_str("\n\nDo not propose any of these criteria or close variants of them:\n");
        for name in excluded {
            s.push_str("- ");
            s.push_str(name);
            s.push('\n');
        }
    }
    s
}

/// Manager prompt analyzing one worker mistake.
#[allow(clippy::too_many_arguments)]
pub fn analyze_mistake(
    domain: Domain,
    name: &str,
    description: &str,
    a: &str,
    b: &str,
    correct: &str,
    worker_answer: &str,
    worker_thought: &str,
) -> String {
    format!(
        "{ANALYZE_HEADER}\nA worker compared two {} texts under the criterion below and disagreed \
         with the human annotators. Explain why the worker made the mistake, then suggest how the \
         criterion description should change so workers judge such pairs correctly.\n\n\
         # Criterion\n**{name}**: {description}\n\n[A]\n{a}\n[/A]\n\n[B]\n{b}\n[/B]\n\n\
         # Human answer\n{correct}\n\n# Worker answer\n{worker_answer}\n\n# Worker thought\n{worker_thought}\n\n\
         Reply with `ANALYSIS:` followed by your analysis and `SUGGESTION:` followed by your suggestion.",
        domain.as_str()
    )
}

/// Manager prompt rewriting a description given all suggestions.
pub fn refine(domain: Domain, name: &str, description: &str, suggestions: &[String]) -> String {
    let mut s = format!(
        "{REFINE_HEADER}\nRefine the description of the {} quality criterion **{name}** so that \
         workers agree with human annotators. Say when the criterion applies and when the worker \
         should answer NULL.\n\n# Current description\n{description}\n\n# Suggestions\n",
        domain.as_str()
    );
    for (i, sug) in suggestions.iter().enumerate() {
        s.push_str(&format!("{}. {}\n", i + 1, sug.trim()));
    }
    s.push_str("\nReply with the refined description only.");
    s
}

/// Human annotation guidelines shown next to each pair.
pub fn guidelines(domain: Domain) -> &'static str {
    match domain {
        Domain::Code => GUIDELINES_CODE,
        Domain::Math => GUIDELINES_MATH,
        Domain::Logic => GUIDELINES_LOGIC,
    }
}

const GUIDELINES_CODE: &str = "\
Please compare the two Python Code files and choose the one of higher quality.

Low-quality code often has the following characteristics:
- The code is badly formatted or has syntax errors.
- The code consists solely of comments or package imports, which is non-informative.
- The code only consists of simple class or function definitions, which is hard to understand without other files.
- The code just defines meaningless variables while do not perform any operations.
- The code is too simple.
- The code contains too much hard-coded data or is a configuration or an entrypoint file to a larger project, which is not helpful in learning programming.

High-quality code often has the following characteristics:
- The code is educational for code starters, which shows basic programming principles, design patterns, or data structures.
- The code is a solution to an algorithm problem, which is beneficial for learning algorithm.
- The code is well-structured with proper code comments, which leads to high readability and maintainability.
- The code shows clear purpose and can accurately solve certain kind of problems, while keeps extensible and flexible.
- The code has self-contained classes or functions that can be understood without other files, which shows high simplicity and reusability.

Choose the better one of A and B according to the above guidelines and your preferences for code quality. If the two files are of similar level, answer C.
";

const GUIDELINES_MATH: &str = "\
Please compare the two text data related to math and choose the one of higher quality.

High-quality math data show significant mathematical intelligence and is educational for math learners. Mathematical quality can be evaluated based on several key aspects:
(1) Logical Structure: Content should demonstrate clear reasoning with properly structured arguments, proofs and deductions, avoiding inconsistencies or unjustified assumptions;
(2) Mathematical Rigor: Expressions should use precise and consistent notation, terminology and symbols throughout, with all necessary steps clearly stated;
(3) Pedagogical Value: The content should be build systematically from fundamentals to advanced ideas, including instructive examples that reinforce understanding;
(4) Conceptual Depth: Material should go beyond elementary arithmetic to explore deeper mathematical concepts and problem-solving techniques, showing connections between different ideas;
(5) Technical Accuracy: Content should be free of mathematical errors, misconceptions, ambiguous notation, or incorrect terminology that could impede understanding.

High-quality mathematical content will excel in these areas while maintaining accessibility, whereas lower-quality content may be lacking in one or more of these essential aspects.

Choose the better one of A and B according to the above guidelines and your preferences for mathematical quality. If the two texts are of similar level, answer C.
";

const GUIDELINES_LOGIC: &str = "\
Compare the following two texts, determine which one better requires and promotes logical thinking by evaluating these three essential criteria:

1. Does understanding later content require careful reasoning from previous information?
- Positive: Text that builds logical arguments progressively.
- Negative: Text that can be understood superficially without deeper thinking.

2. Does comprehension require connecting multiple pieces of evidence or ideas?
- Positive: Text with interconnected logical elements.
- Negative: Simple chronological narratives or disconnected descriptions.

3. Can the content be understood through clear rational analysis?
- Positive: Text with well-defined logical relationships.
- Negative: Ambiguous literary expressions with multiple subjective interpretations.

Choose the better one of A and B according to the above guidelines and your preferences for logical quality. If the two texts are of similar level, answer C.
";
