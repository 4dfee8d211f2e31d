//! Prompt templates for every agent call and the `{placeholder}` renderer.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub const DESCRIBE: &str = "describe_visual";
pub const CHUNK: &str = "semantic_chunking";
pub const DOMAIN_PERSONA: &str = "domain_and_expert_from_topics";
pub const COMPLETENESS: &str = "completion_verification";
pub const ADDITION: &str = "chunk_addition_verification";
pub const QA_GENERATION: &str = "multi_hop_qa_generation";
pub const VERIFY: &str = "question_answer_verification";
pub const RERANK: &str = "rerank_vlm";
pub const RANK: &str = "deduplication_rank";
pub const MERGE: &str = "deduplication_merge";
pub const JUDGE: &str = "judge_scores";
pub const GROUNDING: &str = "visual_grounding";

/// Appended to a prompt when the previous response failed to parse.
pub const REPROMPT_SUFFIX: &str = "\n\nYour previous response did not follow the Required Output Format. \
Respond again using exactly the required format and nothing else.";

#[derive(Debug, Clone, Copy)]
pub struct Template {
    pub id: &'static str,
    pub text: &'static str,
    pub multimodal: bool,
    pub temperature: f64,
}

const GENERATOR_TEMPERATURE: f64 = 0.7;
const PARSER_TEMPERATURE: f64 = 0.0;

static TEMPLATES: &[Template] = &[
    Template {
        id: DESCRIBE,
        multimodal: true,
        temperature: GENERATOR_TEMPERATURE,
        text: "Provide a technical summary of the image/table for documentation.
Format: Single continuous paragraph, under 250 words. No bullets.
Content Requirements:
1. Identify the image type (table/figure) and its primary objective.
2. Technical Analysis:
   - For Plots/Charts: Define axes/units, variables, and key trends/regions.
   - For Diagrams: Identify components, connection flows, and system boundaries.
   - Note: Describe visual attributes only if they encode data; ignore decorative elements and metadata.
3. Conclusion: Summarize critical insights and practical design implications.
Image: {image}
Surrounding markdown:
{context}",
    },
    Template {
        id: CHUNK,
        multimodal: false,
        temperature: PARSER_TEMPERATURE,
        text: "You are a Semantic Chunking Engine. Segment markdown into coherent, verbatim chunks.
Processing Rules:
1. **Exclusions:** Ignore Table of Contents and Lists of Figures/Tables.
2. **Cohesion:** Merge orphan titles and short subsections into adjacent text. Ensure chunks are semantically self-contained.
3. **Status:** Mark as INCOMPLETE only if the final chunk ends abruptly (cut-off).
Chunk Classifications:
- **figure**: Image (`![...]`) with \"Figure X\" caption, description, and key. Set <artifact> to image path.
- **standalone image**: Image *without* \"Figure X\" caption. Set <artifact> to image path.
- **table**: \"Table X\" caption + markdown table + footnotes. Set <artifact> to 'None'.
- **table with images**: Table containing `![...]`. Set <artifact> to image path(s).
- **text**: Paragraphs, lists, or definitions. Set <artifact> to 'None'.
Output Format:
<chunk_id><|#|><chunk_type><|#|><content><|#|><artifact><|#|><status><|#|><chunk_end>
Field Definitions:
- chunk_id: Sequential integer starting at 1.
- chunk_type: text | table | table with images | figure | standalone image
- content: Exact unmodified markdown.
- artifact: Extracted image path(s) or 'None'.
- status: COMPLETE | INCOMPLETE
Markdown:
{markdown}",
    },
    Template {
        id: DOMAIN_PERSONA,
        multimodal: false,
        temperature: PARSER_TEMPERATURE,
        text: "I have analyzed a technical document collection and extracted the following key topics:
{topic_list_str}
Based on these topics, please determine:
1. The specific technical or professional domain these topics belong to.
2. A specific expert role title for a professional in this domain.
Format your response exactly as follows (do not add any other text):
<|#|>START<|#|>
<|#|>Domain: <The Domain>
<|#|>Expert Role: <The Expert Role>
<|#|>END<|#|>",
    },
    Template {
        id: COMPLETENESS,
        multimodal: true,
        temperature: PARSER_TEMPERATURE,
        text: "You are a Chunk Completion Verification Agent. Evaluate if the provided text is semantically self-contained given that you are a(n) {expert_persona} working in the {domain} domain .
Criteria for INCOMPLETE status:
1. Missing Artifacts: References to Figures, Tables, or Sections not present in the chunk (e.g., \"see Figure 1\").
2. Undefined Context: Acronyms, technical terms, or variables used without definition or prior explanation.
3. Broken Continuity: Implicit references (e.g., \"as mentioned above,\" \"this method\") or text describing a missing visual.
4. Rule: Do not assume expert inference. If a definition or artifact is missing, it is INCOMPLETE. Universal units are allowed.
Instructions:
- If COMPLETE: Confirm self-containment.
- If INCOMPLETE: Generate specific search queries to retrieve the missing definitions or artifacts.
Required Output Format:
Status: COMPLETE, Query: None, Explanation: <brief reasoning>
OR
Status: INCOMPLETE, Query: <specific_search_query_1> | <specific_search_query_2>, Explanation: <list missing refs/definitions>
Text:
{content}",
    },
    Template {
        id: ADDITION,
        multimodal: true,
        temperature: PARSER_TEMPERATURE,
        text: "You are a Chunk Addition Verification Agent ({expert_persona}, {domain}). Determine how a CANDIDATE CHUNK relates to an INCOMPLETE ORIGINAL CHUNK based on a specific SEARCH QUERY.
Classify as:
1. EXPLANATORY: Directly resolves the missing element. It provides the specific figure/table, defines the unknown term, or supplies the explicitly referenced prior context.
2. RELATED: Contextually relevant but does not solve the specific gap. Includes general theory, complementary data, or content useful for multi-hop QA (even if it references the same missing artifact).
3. UNRELATED: No semantic overlap or domain relevance.
Output Format:
Status: <EXPLANATORY | RELATED | UNRELATED>
Explanation: <Brief justification>
SEARCH QUERY: {query}
INCOMPLETE ORIGINAL CHUNK:
{original}
CANDIDATE CHUNK:
{candidate}",
    },
    Template {
        id: QA_GENERATION,
        multimodal: true,
        temperature: GENERATOR_TEMPERATURE,
        text: "You are a(n) {expert_persona} in {domain_context}. Construct a high-quality Question-Answer pair by synthesizing information across the provided text chunks.
Content:
{content}
**Execution Protocol (Strict Order):**
1. **Chunk Count:** Identify how many distinct chunks are present.
2. **Keyword Extraction:** List critical technical keywords for *each* chunk.
3. **Relationship Mapping:** Identify \"Bridge Keywords\"---concepts that relate or intersect across the chunks.
4. **QA Synthesis:** Frame question-answer pairs that requires synthesizing these related keywords. The question must be unsolvable without combining info from multiple points.
5. **Decomposition:** Map specific parts of the Question and Answer back to their source chunks.
**Critical Constraints:**
- **No Hallucination:** Answer ONLY using provided content.
- **Self-Sufficiency:** The question must be standalone. NEVER use phrases like \"the provided figure,\" \"the text above,\" or \"Section 2.1\" without context. Explicitly name the object (e.g., \"In Figure XX from document YY...\").
- **Complexity:** The question must be multi-hop (requires connecting A to B).
**Output Format:**
<|#|>ANALYSIS<|#|>
Chunk Count: <Integer>
Keywords per Chunk: <Chunk 1: [A, B], Chunk 2: [C, D]>
Related Keywords: <[A] relates to [C] via...>
<|#|>QA_GENERATION<|#|>
Question: <Your specific, self-contained question>
Answer: <Concise technical answer>
Relevance: <0-10>
Difficulty: <0-10>
<|#|>DECOMPOSITION<|#|>
Question Source: <\"Part of Q\" -> derived from Chunk X>
Answer Source: <\"Part of A\" -> derived from Chunk Y>
<|#|>END<|#|>",
    },
    Template {
        id: VERIFY,
        multimodal: true,
        temperature: PARSER_TEMPERATURE,
        text: "You are a QA Verification Agent ({expert_persona}, {domain_context}). Evaluate the validity of the following QA pair.
Context: Users see the Question WITHOUT the Content. The Question must be completely self-contained.
Evaluation Rules:
1. **Standalone Principle (QUESTION_CORRECT | INCORRECT):**
   - The Question is INCORRECT if it relies on implicit context or vague references (e.g., \"the provided figure\", \"this table\", \"the described method\", \"Section 2\").
   - The Question is CORRECT only if it explicitly names the subject, standard, or artifact (e.g., \"In Figure XX of the document YY\", \"The inflation-time chart...\").
2. **Factuality (ANSWER_CORRECT | INCORRECT):**
   - The Answer must be factually supported by specific data/principles in the Content.
3. **Necessity (REQUIRES_CONTENT | CAN_ANSWER_WITHOUT_CONTENT):**
   - Determine if the specific provided Content is required to answer, or if general domain knowledge suffices.
Inputs:
Content: {content}
Question: {question}
Answer: {answer}
Required Output Format:
QUESTION_[CORRECT|INCORRECT]
ANSWER_[CORRECT|INCORRECT]
[REQUIRES_CONTENT|CAN_ANSWER_WITHOUT_CONTENT]
Justification: <Brief reasoning>",
    },
    Template {
        id: RERANK,
        multimodal: true,
        temperature: PARSER_TEMPERATURE,
        text: "You are a VLM Reranking Agent. Rank the provided chunks (text and images) by relevance to the Query.
Input Markers: `<CHUNK_START id=N>` and `<IMAGE_START>`.
Instructions:
1. Analyze both textual context and visual data to determine relevance.
2. List ALL chunk IDs in descending order (Rank 1 = Highest).
3. Output strictly in this format (no conversational text):
<Rank 1>Chunk <id>
<Rank 2>Chunk <id>
<Rank N>Chunk <id>
Query: {query}
{chunks}",
    },
    Template {
        id: RANK,
        multimodal: false,
        temperature: PARSER_TEMPERATURE,
        text: "You are a Data Curator ({expert_persona}, {domain}). Reorder the provided cluster of QA pairs based on their relationship to the core topic.
Task: Sort the list from **Most Distinct/Unique** (least similar) to **Most Representative/Redundant** (most similar).
Constraint: Preserve all text verbatim. Do not omit sub-questions or modify content.
Candidates:
{candidates_text}
Required Output Format:
<|#|>START<|#|>
Question<|#|><Question_Text><|#|>Answer<|#|><Answer_Text>
<|#|>NEXT<|#|>
Question<|#|><Question_Text><|#|>Answer<|#|><Answer_Text>
<|#|>END<|#|>",
    },
    Template {
        id: MERGE,
        multimodal: false,
        temperature: GENERATOR_TEMPERATURE,
        text: "You are a Data Curator ({expert_persona}, {domain}). Synthesize the provided QA cluster into the MINIMAL set of high-quality pairs.
Processing Logic:
1. **Merge:** Combine complementary pairs into comprehensive questions (integrating sub-questions) and unified answers.
2. **Deduplicate:** Select the single best version for exact or near-duplicates.
3. **Goal:** Zero redundancy while retaining full information coverage.
Input Candidates:
{candidates_text}
Required Output Format:
<|#|>START<|#|>
Question<|#|><Merged/Refined Question><|#|>Answer<|#|><Merged/Refined Answer>
<|#|>NEXT<|#|>
Question<|#|><Second Pair (if needed)><|#|>Answer<|#|><Second Answer>
<|#|>END<|#|>",
    },
    Template {
        id: JUDGE,
        multimodal: false,
        temperature: PARSER_TEMPERATURE,
        text: "You are an evaluation judge ({expert_persona}, {domain}). Score the QA pair against the Content.
Faithfulness: every claim in the Answer is supported by the Content (0 = unsupported, 10 = fully supported).
Relevance: the pair targets the substantive information of the Content (0 = off-topic, 10 = central).
Content:
{content}
Question: {question}
Answer: {answer}
Required Output Format:
Faithfulness: <0-10>
Relevance: <0-10>",
    },
    Template {
        id: GROUNDING,
        multimodal: true,
        temperature: PARSER_TEMPERATURE,
        text: "You are a visual grounding verifier. Check whether the specific visual features referenced in the Answer (trend lines, data points, structures, labels) are present in the attached images.
Question: {question}
Answer: {answer}
Images: {images}
Required Output Format:
GROUNDED or NOT_GROUNDED
Justification: <Brief reasoning>",
    },
];

pub fn lookup(id: &str) -> Option<&'static Template> {
    TEMPLATES.iter().find(|t| t.id == id)
}

pub fn all() -> &'static [Template] {
    TEMPLATES
}

fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_'
}

/// Names of `{placeholder}` slots in order of first appearance.
pub fn placeholders(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if close > 0 && after[..close].chars().all(is_placeholder_char) => {
                let name = &after[..close];
                if !out.iter().any(|n| n == name) {
                    out.push(name.to_string());
                }
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

/// Substitutes every placeholder. Substituted values are not rescanned.
pub fn render(template: &Template, vars: &BTreeMap<String, String>) -> Result<String> {
    let mut out = String::with_capacity(template.text.len() + 256);
    let mut rest = template.text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if close > 0 && after[..close].chars().all(is_placeholder_char) => {
                let name = &after[..close];
                let value = vars.get(name).ok_or_else(|| {
                    Error::Template(format!(
                        "placeholder {{{name}}} of template `{}` is unbound",
                        template.id
                    ))
                })?;
                out.push_str(value);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}
