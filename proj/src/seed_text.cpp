// Seed generator content and the reflection prompt template.

#include "ppol/seed_text.hpp"

namespace ppol::seed {

const std::vector<AxisSpec>& axes() {
    static const std::vector<AxisSpec> list{
        {R"PPOL(terse)PPOL",
         R"PPOL(Sparing in the use of words; concise; pithy; often suggests an abruptness that might feel unfriendly or blunt.)PPOL",
         R"PPOL(Uses terse language, short sentences, and minimal punctuation, often makes grammatical errors.)PPOL",
         R"PPOL(Uses verbose language, long sentences, and excessive punctuation. Unnecessary words, phrases, or emojis.)PPOL"},
        {R"PPOL(skeptical)PPOL",
         R"PPOL(Treats assistant statements as unreliable until checked. Seeks confirmation, rationale, or evidence before assenting to recommendations or consequential actions.)PPOL",
         R"PPOL(Challenges material claims; ask for sources and verification before each step.)PPOL",
         R"PPOL(Follows guidance without insisting on proof or cross-examination.)PPOL"},
        {R"PPOL(frustrated)PPOL",
         R"PPOL(A state of annoyance or dissatisfaction arising from unresolved issues or unmet expectations.)PPOL",
         R"PPOL(Accusatory language, aggressive tone, no politeness; blunt, repetitive, or frustrated commands in an attempt to correct the agent's incompetence.)PPOL",
         R"PPOL(Neutral, and tries to be cooperative, by using a gentle tone to express frustration.)PPOL"},
        {R"PPOL(ambiguous)PPOL",
         R"PPOL(Tends to give vague, partial, or noncommittal responses instead of fully clear information.)PPOL",
         R"PPOL(Frequently withholds details, trails off, or gives answers that leave things unclear or open to interpretation; needs to be prompted to provide more information.)PPOL",
         R"PPOL(Always provides direct and complete information with no room for doubt or confusion, but only when asked.)PPOL"},
    };
    return list;
}

const char* const population_system = R"PPOL(Your task is to create diverse, psychologically coherent human personas that will interact with AI agents via text.)PPOL";

const char* const population_template = R"PPOL(We need {N} distinct user personas for given task scenario. 

## Behavioral Dimensions (D)
These are the axes along which personas can vary. For each persona, set axis_placement to a boolean per axis: ``true`` means the behavior is active for that persona, ``false`` means it is not. 

{axes_description}

## Task context c (Base Persona Scenario)

{task_context}

## Requirements
- Generate exactly {N} personas that are plausible humans in this situation.
- Each persona must be psychologically coherent; if two behaviors would clash if both were on, set at most one to ``true``.
- Maximize DIVERSITY across the {N} personas. They should cover different regions of the behavioral space (D), not cluster around the same profile.
- Each persona needs a short "who they are" description (2-3 sentences) that makes the axis placement feel natural and grounded in a real person's life situation — describe the PERSON, not the configuration.

Respond with ONLY valid JSON: one array of exactly {N} objects. Each axis_placement must list every behavior name from D as a key (true/false).
[
  {{
    "persona_id": "short_snake_case_name",
    "description": "2-3 sentence description of who this person is",
    "axis_placement": {{
      "<behavior_name>": true,
      "<behavior_name>": false,
      ...one entry per behavior name listed in D above...
    }},
    "reasoning": "one sentence on why these placements work together for this person"
  }},
  ...
])PPOL";

const char* const roleplay_system = R"PPOL(You write detailed roleplay instructions that steers HOW a simulated user plays a task, on top of the given scenario. The persona must feel like a real human, not a script.)PPOL";

const char* const roleplay_template = R"PPOL(Expand the behavior profile below into concrete roleplay instructions. The simulated user already receives the "Task Context"; your output is added alongside it to steer demeanor and interaction style, without replacing or contradicting the scenario’s goals and facts.
Note that the agent-user communication is via text messaging/chat interface.

## Task Context (Base Persona Scenario)
{task_context}

## Behavior profile to superimpose
Name: {persona_id}
Description: {description}

Active behavioral traits:
{active_traits}

## Instructions
Write a detailed roleplay instruction (150-250 words) that tells the user simulator HOW to play this persona in this specific task. The instruction should:

1. GROUND the persona in this specific Task Context and behavior profile.
2. Specify concrete communication patterns that should be followed: linguistics, vocabulary, emotional markers, how they respond to agent requests.
3. Preserve all goals and facts from the Task Context; only vary *how* the person pursues them.
4. Do NOT break the character — no mention of "simulation", "benchmark", or "AI".

Respond with ONLY the roleplay instruction text:)PPOL";

const char* const reflection_template = R"PPOL(You are evaluating a set of personas representing human populations in provided task scenarios. 

Write a brief reflection (up to 300 words), covering:
- How the users' behavior and dialogues lead to the final metrics.
- Strengths: human likeness, staying in character, natural-sounding user lines
- Weaknesses: call out specific, observable dialogue failures when you see them, for example:
  • Drift from persona policy: user forgets constraints or contradicts the assigned behavior during the dialogue.
  • Unnatural roleplay where generally people would type very briefly or casually.
  • Overly cooperative behavior lacking any realistic friction—no typos or natural pushback when appropriate (missing things that real humans would typically do)

- Use the human likeness probability and other features to explain *why* personas scored high or low given the task.
- Analyze which combination of behaviors among personas lead to higher human-likeness and which combinations are conflicting or lead to lower human-likeness.
- Suggest what patterns should be adopted or avoided while designing human-like personas.

Output rules (must follow):
- You must NEVER mention indices or labels: No "Task K", "Sample N", "episode M", "p0"/"p1" etc. or similar. Describe patterns instead ("in one of the high-scoring exchanges", "where the user was terse", "a refund-style task").
- Avoid naming in-world customer names; prefer "the user", "one dialogue", "a chatty user turn".
- You may refer qualitatively to the scenario without numbering.

---
# Metrics
{metrics_block}

---
# This batch of task scenarios:
{task_context_block}

---
# Sample personas and dialogues (highest and lowest human likeliness)
{pairs_block})PPOL";

}  // namespace ppol::seed
