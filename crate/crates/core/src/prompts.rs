//! Prompt construction for every model-backed step.
//!
//! Each user message starts with a `TASK: <id>` line and ends with an
//! `INPUT:` section holding a compact JSON payload, so replies can be produced
//! by a real model or by the rule-based [`crate::gateway::OfflineModel`].

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gateway::{ChatRequest, Message};

pub const TASK_GENERATE_TOOL: &str = "generate_tool";
pub const TASK_REFINE_TOOL: &str = "refine_tool";
pub const TASK_VALIDATE_EDGES: &str = "validate_edges";
pub const TASK_SYNTHESIZE_GOAL: &str = "synthesize_goal";
pub const TASK_SCORE_GOAL: &str = "score_goal";
pub const TASK_PARTITION_PATH: &str = "partition_path";
pub const TASK_SUBGOAL: &str = "subgoal";
pub const TASK_USER_TURN: &str = "user_turn";
pub const TASK_CLARIFY: &str = "clarify";
pub const TASK_TOOL_CALL: &str = "tool_call";
pub const TASK_TOOL_RESPONSE: &str = "tool_response";
pub const TASK_SUMMARIZE: &str = "summarize";
pub const TASK_PARAPHRASE: &str = "paraphrase";
pub const TASK_JUDGE: &str = "judge_dialogue";
pub const TASK_ASSISTANT_CLAIMS: &str = "assistant_claims";

/// Sampling temperature per model-backed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Temperatures {
    pub tool_generation: f64,
    pub refinement: f64,
    pub edge_validation: f64,
    pub goal_synthesis: f64,
    pub goal_scoring: f64,
    pub planning: f64,
    pub user_agent: f64,
    pub assistant_agent: f64,
    pub tool_agent: f64,
    pub paraphrase: f64,
    pub judge: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Temperatures {
            tool_generation: 0.8,
            refinement: 0.2,
            edge_validation: 0.0,
            goal_synthesis: 0.7,
            goal_scoring: 0.0,
            planning: 0.3,
            user_agent: 0.8,
            assistant_agent: 0.5,
            tool_agent: 0.3,
            paraphrase: 0.9,
            judge: 0.0,
        }
    }
}

const SYSTEM_JSON: &str = "You are a careful data engineer. Follow the task instructions exactly and reply with a single JSON document and nothing else.";

/// Role prompts for the dialogue agents.
pub const SYSTEM_USER_AGENT: &str = "You play the user of a tool-using assistant. Speak naturally and briefly, in the first person. When asked to provide values, invent realistic, type-correct values and state each one verbatim in your utterance.";
pub const SYSTEM_ASSISTANT_AGENT: &str = "You are a helpful assistant that can call tools. Ask only for information you truly need, and summarize tool results faithfully without adding facts.";
pub const SYSTEM_TOOL_AGENT: &str = "You simulate a backend API. Given a tool schema and call arguments, return a realistic JSON result that conforms exactly to the result schema.";

/// Renders a request: `TASK` header, instructions, then the JSON payload.
pub fn task_message(task: &str, instructions: &str, input: &Value) -> String {
    format!("TASK: {task}\n{instructions}\n\nINPUT:\n{input}")
}

pub fn structured_request(
    system: &str,
    task: &str,
    instructions: &str,
    input: &Value,
    temperature: f64,
) -> ChatRequest {
    ChatRequest::new(vec![Message::system(system), Message::user(task_message(task, instructions, input))])
        .temperature(temperature)
        .structured()
}

pub fn json_request(task: &str, instructions: &str, input: &Value, temperature: f64) -> ChatRequest {
    structured_request(SYSTEM_JSON, task, instructions, input, temperature)
}

/// Splits a task message into its id and payload.
pub fn parse_task(content: &str) -> Option<(String, Value)> {
    let first = content.lines().find(|l| !l.trim().is_empty())?;
    let task = first.trim().strip_prefix("TASK:")?.trim().to_string();
    let input = match content.rfind("\nINPUT:") {
        Some(pos) => serde_json::from_str(content[pos + 7..].trim()).ok()?,
        None => Value::Null,
    };
    Some((task, input))
}

pub fn stage_instructions(stage: &str) -> &'static str {
    match stage {
        "Seed Generation" => "Design one fundamental entry-point API for the domain, such as a search or create operation on a core entity.",
        "Entity Expansion" => "Design one API that covers a domain entity from the context facts which the existing APIs do not cover yet.",
        "Schema Enrichment" => "Take one existing API with a simple schema and return an enriched version with the same name: add nested objects, enums, defaults and required flags.",
        "Connection Discovery" => "Design one API that consumes an output of an existing API. Linking parameters must reuse the exact output parameter name.",
        "Pattern Expansion" => "Design one parallel variation of an existing API, for example a different way to search the same entity.",
        _ => "Design one realistic API for the domain.",
    }
}

pub const GENERATE_TOOL_INSTRUCTIONS: &str = "Return one tool document with fields name (snake_case), description, parameters (a JSON-schema object with properties and required) and results (a JSON-schema object). Do not repeat an existing tool name.";

pub const REFINE_TOOL_INSTRUCTIONS: &str = "Refine this tool: infer enums and defaults where values are categorical, make identifiers required, normalize parameter names to snake_case and types to JSON-schema types, and rephrase the description. Keep the tool name. Return the full tool document.";

pub const VALIDATE_EDGES_INSTRUCTIONS: &str = "For each candidate pair decide whether the output parameter of the first tool can be passed as the input parameter of the second tool without transformation. Reply with {\"verdicts\": [{\"index\": i, \"valid\": true|false, \"reason\": \"...\"}]}.";

pub const SYNTHESIZE_GOAL_INSTRUCTIONS: &str = "Write one natural-language goal that a user could have, which requires calling these tools in the given order and uses the outputs of earlier tools as inputs of later ones. Reply with {\"goal\": \"...\"}.";

pub const SYNTHESIZE_GOAL_FAN: &str = "The first tool feeds several independent tools whose outputs are combined by the final tool; the goal must need all of them.";

pub const SYNTHESIZE_GOAL_CONDITIONAL: &str = "The first tool returns a decision value; depending on it, a different follow-up tool is used. The goal must describe both outcomes.";

pub const SCORE_GOAL_INSTRUCTIONS: &str = "Rate the goal for this tool path. coherence: how logically the tools compose to reach the goal; relevance: how well the goal needs exactly these tools. Use integers from -2 to 2. Reply with {\"coherence\": c, \"relevance\": r}.";

pub const PARTITION_INSTRUCTIONS: &str = "Split the tool path into contiguous segments that a user would naturally request in separate turns. Keep dependent tools together when that forms a meaningful multi-step request. Reply with {\"partitions\": [[tool, ...], ...]} covering every tool once, in order.";

pub const SUBGOAL_INSTRUCTIONS: &str = "Write a concise, user-friendly request (first person) that covers exactly the purpose of these tools and differs from the other subgoals. Mention an optional parameter only if the overall goal needs it. Reply with {\"subgoal\": \"...\"}.";

pub const USER_TURN_INSTRUCTIONS: &str = "Write the user's next message. Provide a concrete value for every listed parameter and include each value verbatim in the message; do not provide anything else. Reply with {\"utterance\": \"...\", \"values\": {\"tool.param\": value, ...}}.";

pub const CLARIFY_INSTRUCTIONS: &str = "Write the assistant's question asking the user for the listed missing parameters, and nothing else. Reply with {\"utterance\": \"...\"}.";

pub const TOOL_CALL_INSTRUCTIONS: &str = "Produce the call for this tool. The bound arguments are fixed and must be used exactly. Reply with {\"name\": \"...\", \"arguments\": {...}}.";

pub const TOOL_RESPONSE_INSTRUCTIONS: &str = "Return the API result for this call. Every result field must be present and conform to its type, enum and format; identifiers must be fresh plausible tokens; stay consistent with the known values. Reply with {\"result\": {...}}.";

pub const SUMMARIZE_INSTRUCTIONS: &str = "Summarize these tool results for the user, citing values exactly as returned and adding nothing. Reply with {\"utterance\": \"...\"}.";

pub const PARAPHRASE_INSTRUCTIONS: &str = "Rephrase the user's message with different wording and the same meaning. Every string in keep must appear verbatim. Reply with {\"utterance\": \"...\"}.";

pub const ASSISTANT_CLAIMS_INSTRUCTIONS: &str = "Decide whether the assistant message states results that are not supported by the preceding tool outputs. Reply with {\"hallucinated\": true|false, \"reason\": \"...\"}.";

/// Dialogue-quality judge prompt, used verbatim with temperature 0.
pub const JUDGE_PROMPT: &str = r#"You are asked to evaluate some synthetic dialogue data. These synthetic dialogue occur between the user, the AI assistant, and the tool. Please evaluate the data based on the following criteria, assigning a score from 1 to 5 for each category. Use the detailed descriptions below to guide your assessment:

- Naturalness (1-5 points): Only evaluate whether the user's request and response is natural and realistic. Focus more on the natural flow of the conversation and less on the choice of words. For example, pay attention to whether users will ask similar questions in real scenarios. And assess whether user behavior is natural. For example, real users rarely ask similar questions consecutively or ask longer questions.

- Coherence (1-5 points): Evaluate the overall flow and logical connection between the turns in the conversation. Focus on checking whether the user's previous and subsequent rounds of requests are relevant. Also, ensure that meaningful order of agent interactions is maintained. For example, the agent should not provide information before the user requests it. Similarly, the relevant tools must be invoked only after the assistant calls the tool with the relevant parameters. Such discrepancies should be heavily penalized.

- Helpfulness (1-5 points): Determine the effectiveness and value of the AI assistant's responses in addressing the user's needs.

- Accuracy (1-5 points): Check for the accuracy and consistency of the information provided. Everything returned by the tool is assumed to be accurate. However, at the same time, if the assistant hallucinates or makes up information, it should be heavily penalized.

Below are some examples that are rated poorly in each category:

1. Naturalness:
- User: "Can you tell me about the weather?"
- Assistant: "The weather is nice."
- User: "What about tomorrow?"
- Assistant: "Tomorrow will be nice too."

2. Coherence:
- User: "What's the capital of France?"
- Assistant: "The capital of France is Paris."
- User: "And the capital of Germany?"
- Assistant: "The capital of Germany is Berlin."

3. Helpfulness:
- User: "I need help with my homework."
- Assistant: "What subject is it?"
- User: "Math."
- Assistant: "Okay."

4. Accuracy:
- User: "What's the capital of Italy?"
- Assistant: "The capital of Italy is Rome."
- User: "What's the capital of Spain?"
- Assistant: "The capital of Spain is Barcelona."

Some more examples specifically catered to tool usage:
1. Coherence: (Tool simulated before assistant provides tool to be called along with its input parameters)
- User: "Can you raise a ticket for my internet issue?"
- Tool: {"ticket_id": "12345"}

2. Coherence: (Assistant goes on rambling trying to correct erroneous tool output but never calls the tool)
- User: "Please book a flight for me."
- Assistant: "Sure, I can help you with that. Can you please provide me with the details of your flight?"
- User: "I need a flight from New York to San Francisco on March 10th."
- Assistant: book_flight({"from": "New York", "to": "San Francisco", "date": "March 10th"})
- Tool: "Flight ID not found."
- Assistant: "I apologize for the inconvenience. It seems that there was an error with the flight ID. Let me try again."
- Tool: "Flight ID not found."

3. Coherence: (Assistant talks about calling tool but does not use the required tool-calling format)
- User: "Can you check the weather for me?"
- Assistant: "Sure, I can help you with that. Let me check the weather for you."
- Tool: {"temperature": "72°F", "condition": "Sunny"}
- Assistant: "The weather is 72°F and sunny."

4. Accuracy: (Assistant hallucinates information)
- User: "Can you reserve a table for two at an Italian restaurant in New York City for tomorrow night?"
- Assistant: "Sure, I have reserved a table for two at 'Luigi's Italian Bistro' in New York City for tomorrow night at 7 PM."

All such examples must be heavily penalized, and the scores they receive should be 1 or 2.

Please use a more **CRITICAL** and **STRICT** evaluation method. After scoring, please provide brief comments or feedback for each category to explain your ratings.

Please provide your evaluation in the following format:

Evaluation of Synthetic Dialogue Data

1. Naturalness: [Score] / 5
- Comments: [Brief comments or feedback]

2. Coherence: [Score] / 5
- Comments: [Brief comments or feedback]

3. Helpfulness: [Score] / 5
- Comments: [Brief comments or feedback]

4. Accuracy: [Score] / 5
- Comments: [Brief comments or feedback]"#;

/// Judge request: the fixed prompt as system message, transcript as input.
pub fn judge_request(rendered_dialogue: &str, turns: &Value, temperature: f64) -> ChatRequest {
    let user =
        format!("TASK: {TASK_JUDGE}\nEvaluate the following dialogue.\n\n{rendered_dialogue}\n\nINPUT:\n{turns}");
    ChatRequest::new(vec![Message::system(JUDGE_PROMPT), Message::user(user)]).temperature(temperature)
}
