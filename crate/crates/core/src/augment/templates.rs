//! Prompt and template banks, plus `{placeholder}` rendering.

use crate::error::{KoreError, Result};

pub const RECOGNITION_SUFFIX: &str = "Answer this question with Yes or No.";
pub const CAPTION_SUFFIX: &str = "Answer this question in one paragraph.";
pub const VQA_SUFFIX: &str = "Answer the question using a single word or phrase.";
pub const RECOGNITION_ANSWER: &str = "Yes";

pub const QUESTION_GEN_SYSTEM: [&str; 5] = [
    "You have received a descriptive text that provides you with the knowledge, events, and definitions described in the text. You need to generate questions coherently and cover as much of the descriptive text as possible. You just need to output the problem. The maximum number of generated questions is 10. If the previously generated questions are sufficient to cover the entire descriptive text, the output questions can be less than 10.",
    "From the provided descriptive text, create up to 10 coherent questions that comprehensively cover its content. Your output should consist only of the questions. It is acceptable to generate fewer than 10 questions if the material has been fully covered.",
    "You are required to formulate a set of coherent questions from a given descriptive text, covering its contents as completely as possible. The number of questions must not exceed 10, but it is permissible to output fewer if they adequately cover the text. The sole output should be the questions.",
    "Generate a series of logical questions that cover all the knowledge, events, and definitions in the descriptive text you have received. While the maximum number of questions is 10, you can output a smaller number if the text is fully addressed. Please ensure you only output the questions.",
    "Your task is to generate questions based on a descriptive text, ensuring they are coherent and cover its knowledge, events, and definitions as thoroughly as possible. You should generate a maximum of 10 questions and only output the questions themselves. You may provide fewer than 10 if they are sufficient to cover the entire text.",
];

pub const QUESTION_GEN_USER: [&str; 5] = [
    "News: {news} Please generate questions.",
    "Given the news: {news} Please generate questions.",
    "Can you generate questions for the following news: {news}.",
    "Generate questions for the following news: {news}.",
    "Please generate questions based on the following news: {news}.",
];

pub const ANSWER_GEN_SYSTEM: [&str; 5] = [
    "You have gained knowledge and a problem to be solved. You need to answer this question based on the content of your knowledge. Output your answer.",
    "You now have the necessary knowledge and a specific problem. Based only on this information, provide your answer to the question and output the result.",
    "You are equipped with the required information and a problem to resolve. Formulate your answer based solely on the content of this knowledge and then output it.",
    "Using the knowledge you have been given, solve the problem presented. Your response must be based exclusively on this information. Please output your answer.",
    "Now that you have the relevant knowledge and the question, you must provide a solution. Ensure your answer is derived strictly from the provided content, then output your response.",
];

pub const ANSWER_GEN_USER: [&str; 5] = [
    "Given the knowledge: {knowledge} Answer the following question: {question}.",
    "Knowledge: {knowledge} Answer the following question: {question}.",
    "Answer the following question based on the knowledge: Knowledge:{knowledge} Question: {question}.",
    "Here is some knowledge: {knowledge} \nNow, answer the following question: {question}.",
    "You are given the knowledge:{knowledge} Can you answer the following question:{question}.",
];

pub const HEURISTIC_NEWS_Q: [&str; 5] = [
    "What is the {type} news in the image about?",
    "Could you summarize the {type} news story presented in the image?",
    "What is the {type} news event being depicted in this picture about?",
    "Please explain the {type} news that is shown in the image.",
    "Can you tell me what the {type} news in this image is about?",
];

pub const HEURISTIC_NEWS_A: [&str; 5] = [
    "The {type} news description in the image is {title}.",
    "The {type} news in the image can be described as {title}.",
    "According to the image, the {type} news description is {title}.",
    "The image provides the following {type} news summary: {title}.",
    "The {type} news content shown in the picture is {title}.",
];

pub const HEURISTIC_ENTITY_Q: [&str; 5] = [
    "What is the {type} entity in the image?",
    "Can you identify the {type} entity shown in the picture?",
    "What is the {type} entity depicted in this image?",
    "Please tell me what the {type} entity in this image is.",
    "What {type} entity is visible in the photo?",
];

pub const HEURISTIC_ENTITY_A: [&str; 5] = [
    "The {type} entity in the image is {entity_name}.",
    "The {type} entity shown in the picture is {entity_name}.",
    "The {type} entity depicted in the image is {entity_name}.",
    "The {type} entity illustrated in the picture is {entity_name}.",
    "The {type} entity present in the image is {entity_name}.",
];

pub const RECOGNITION_NEWS: [&str; 5] = [
    "Is the image depicting news {title}? Answer this question with Yes or No.",
    "Does this image illustrate the news titled {title}? Answer this question with Yes or No.",
    "Is this picture related to the news with the headline {title}? Answer this question with Yes or No.",
    "Is the image about the news report named {title}? Answer this question with Yes or No.",
    "Does this photo correspond to the news {title}? Answer this question with Yes or No.",
];

pub const RECOGNITION_ENTITY: [&str; 5] = [
    "Is {entity_name} in the image? Answer this question with Yes or No.",
    "Does the image show {entity_name}? Answer this question with Yes or No.",
    "Can you see {entity_name} in this picture? Answer this question with Yes or No.",
    "Is {entity_name} visible in the image? Answer this question with Yes or No.",
    "Does this picture contain {entity_name}? Answer this question with Yes or No.",
];

pub const CAPTION_NEWS_Q: [&str; 5] = [
    "Please provide a description for the {type} news in the image. Answer this question in one paragraph.",
    "Could you please describe the {type} news shown in the picture? Answer this question in one paragraph.",
    "Please offer a description of the {type} news depicted in the image. Answer this question in one paragraph.",
    "Please give a description of the {type} news depicted here. Answer this question in one paragraph.",
    "Can you tell me about the {type} news featured in the photograph? Answer this question in one paragraph.",
];

pub const CAPTION_NEWS_A: &str = "The image depicts {title}. {summary}";

pub const CAPTION_ENTITY_Q: [&str; 5] = [
    "Please provide a description for the {type} entity in the image. Answer this question in one paragraph.",
    "Could you please describe the {type} entity shown in the picture? Answer this question in one paragraph.",
    "Please offer a description of the {type} entity depicted in the image. Answer this question in one paragraph.",
    "Please give a description of the {type} entity depicted here. Answer this question in one paragraph.",
    "Can you tell me about the {type} entity featured in the photograph? Answer this question in one paragraph.",
];

pub const CAPTION_ENTITY_A: &str = "The image depicts {entity_name}. {summary}";

pub const SUMMARY_SYSTEM: [&str; 5] = [
    "You have acquired a piece of knowledge, and now you need to condense it into a paragraph of no more than 25 words, while trying to maintain the original meaning of the knowledge as much as possible.",
    "Your task is to take a piece of knowledge you've learned and summarize it. The summary must be a paragraph of 25 words or less, while retaining the original meaning.",
    "You need to distill the information you have acquired into a concise paragraph. Ensure it does not exceed 25 words and preserves the essence of the original knowledge as accurately as possible.",
    "Condense a concept you have just learned into a brief paragraph. You must adhere to a 25-word limit, all while making sure the core message remains intact.",
    "Take the new information you possess and shorten it into a single paragraph. This condensed version must be under 25 words and should accurately reflect the original meaning.",
];

pub const SUMMARY_USER: [&str; 5] = [
    "Knowledge: {knowledge} Please summarize this knowledge.",
    "Given the knowledge: {knowledge} Please summarize this knowledge.",
    "Can you summarize this content for the following knowledge: {knowledge}.",
    "Summarize questions for the following knowledge: {knowledge}.",
    "Please summarize this content based on the following knowledge: {knowledge}.",
];

pub const QUADRUPLET_SYSTEM: [&str; 5] = [
    "You have acquired a piece of knowledge and are now required to generate up to 5 questions based on it. For each generated item, you must provide the question itself, its answer (which should be a word or short phrase), a subject object extracted from the question, and that subject's hypernym. When extracting the subject object, you must follow a critical rule: the subject must be a specific entity that is explicitly mentioned within the question itself, serving as a key reference point. Crucially, this extracted subject cannot be the answer to the question. A helpful test for identifying the correct subject is to check if its name could be logically replaced by a placeholder, such as this company or the entity in the image, while the question remains coherent. If the provided knowledge is fully covered by fewer than 5 questions, you may generate fewer.",
    "Your task is to generate up to five question sets from the provided knowledge. Each set must include the question, a brief answer (word/phrase), a subject object, and its hypernym. When selecting the subject object, you must follow a key rule: it must be a specific entity explicitly named in the question and cannot be the answer. A good test is to see if a placeholder like this entity can logically replace it. Fewer than five questions are fine if the knowledge is fully covered.",
    "Based on the knowledge you've acquired, create a maximum of five questions. For each, provide a short answer, identify a subject object, and state its hypernym. The 'subject object' must adhere to this critical constraint: it must be a specific entity mentioned directly in the question that serves as a reference point but is not the answer. To verify your choice, check if substituting a generic term like this item would keep the question coherent. You may generate fewer questions if they are sufficient.",
    "You are required to produce up to five questions from the given information. For each item, output the question, its short answer, a subject object, and that subject's hypernym. The rule for extracting the subject object is that it must be a specific, named entity within the question's text and must be different from the answer itself. A helpful check is to replace its name with a placeholder (e.g., this organization) to see if the question still makes sense. Fewer questions are acceptable if the topic is fully addressed.",
    "Formulate as many as five questions based on the knowledge. Each output must consist of the question, a concise answer, an extracted subject object, and its hypernym. A crucial guideline applies: the subject object must be a specific entity named in the question that the query revolves around, but it cannot be the answer. You can confirm the correct subject by checking if a placeholder such as the specified object could logically take its place. Generating all five questions is not necessary if the knowledge is completely covered.",
];

pub const QUADRUPLET_USER: [&str; 5] = [
    "Knowledge: {knowledge} Please generate questions, answers, subjects, hypernyms.",
    "Given the knowledge: {knowledge} Please generate questions, answers, subjects, hypernyms.",
    "Can you generate questions, answers, subjects, hypernyms for the following knowledge: {knowledge}.",
    "Generate questions, answers, subjects, hypernyms for the following knowledge: {knowledge}.",
    "Please generate questions, answers, subjects, hypernyms based on the following knowledge: {knowledge}.",
];

/// Which generation request a system prompt belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PromptKind {
    Questions,
    Answer,
    Summary,
    Quadruplets,
}

impl PromptKind {
    pub fn of_system_prompt(system: &str) -> Option<PromptKind> {
        let banks: [(&[&str; 5], PromptKind); 4] = [
            (&QUESTION_GEN_SYSTEM, PromptKind::Questions),
            (&ANSWER_GEN_SYSTEM, PromptKind::Answer),
            (&SUMMARY_SYSTEM, PromptKind::Summary),
            (&QUADRUPLET_SYSTEM, PromptKind::Quadruplets),
        ];
        banks
            .iter()
            .find(|(bank, _)| bank.contains(&system))
            .map(|&(_, kind)| kind)
    }
}

fn is_placeholder_char(c: char) -> bool {
    c.is_ascii_lowercase() || c == '_'
}

/// Yields `(start, end, name)` for each `{name}` token with a non-empty
/// `[a-z_]+` name.
fn placeholders(text: &str) -> impl Iterator<Item = (usize, usize, &str)> + '_ {
    let mut from = 0;
    std::iter::from_fn(move || {
        while let Some(off) = text[from..].find('{') {
            let start = from + off;
            let rest = &text[start + 1..];
            let len = rest.find(|c: char| !is_placeholder_char(c)).unwrap_or(rest.len());
            from = start + 1;
            if len > 0 && rest[len..].starts_with('}') {
                let end = start + len + 2;
                from = end;
                return Some((start, end, &rest[..len]));
            }
        }
        None
    })
}

/// Substitutes each `{name}` in `template`. Inserted values are not rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> Result<String> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut last = 0;
    for (start, end, name) in placeholders(template) {
        let value = vars
            .iter()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| KoreError::Template(format!("no value for placeholder {{{name}}}")))?;
        out.push_str(&template[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// The first unresolved `{name}` token in `text`, if any.
pub fn unresolved_placeholder(text: &str) -> Option<&str> {
    placeholders(text).next().map(|(_, _, name)| name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_substitutes_and_names_missing() {
        let s = render(RECOGNITION_ENTITY[0], &[("entity_name", "Oppenheimer")]).unwrap();
        assert_eq!(s, "Is Oppenheimer in the image? Answer this question with Yes or No.");
        let err = render(HEURISTIC_NEWS_A[0], &[("type", "politics")]).unwrap_err();
        assert!(err.to_string().contains("{title}"), "{err}");
    }

    #[test]
    fn values_are_not_rescanned() {
        let s = render("a {x} b", &[("x", "{y}")]).unwrap();
        assert_eq!(s, "a {y} b");
    }

    #[test]
    fn scan_ignores_non_placeholders() {
        assert_eq!(unresolved_placeholder("set {1, 2} and {} and {Upper}"), None);
        assert_eq!(unresolved_placeholder("left {entity_name} over"), Some("entity_name"));
        assert_eq!(unresolved_placeholder("{{type}"), Some("type"));
    }

    #[test]
    fn suffixes_match_banks() {
        assert!(RECOGNITION_NEWS.iter().chain(&RECOGNITION_ENTITY).all(|t| t.ends_with(RECOGNITION_SUFFIX)));
        assert!(CAPTION_NEWS_Q.iter().chain(&CAPTION_ENTITY_Q).all(|t| t.ends_with(CAPTION_SUFFIX)));
    }

    #[test]
    fn system_prompts_are_classified() {
        assert_eq!(PromptKind::of_system_prompt(SUMMARY_SYSTEM[3]), Some(PromptKind::Summary));
        assert_eq!(PromptKind::of_system_prompt(QUADRUPLET_SYSTEM[0]), Some(PromptKind::Quadruplets));
        assert_eq!(PromptKind::of_system_prompt("hello"), None);
    }
}
