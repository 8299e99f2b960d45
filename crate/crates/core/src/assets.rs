//! Bundled level data: level words, descriptions and guidelines, prompt
//! templates, conversation topics, and example dialogues.

use crate::level::Level;

pub const LANGUAGE: &str = "Japanese";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelInfo {
    pub level_word: &'static str,
    pub guidelines: &'static str,
    pub description: &'static [&'static str],
}

impl LevelInfo {
    /// Description bullets, one per line, each prefixed with `- `.
    pub fn description_text(&self) -> String {
        self.description.iter().map(|d| format!("- {d}")).collect::<Vec<_>>().join("\n")
    }
}

const LEVEL_INFO: [LevelInfo; 5] = [
    LevelInfo {
        level_word: "beginner",
        guidelines: "You should use only very basic vocabulary and simple sentence structures understandable in everyday situations.",
        description: &[
            "can understand only very basic Japanese",
            "very easy expressions and sentences written in hiragana, katakana, and basic kanji",
            "very short and easy conversations spoken slowly about topics regularly encountered in daily life and classroom situations",
        ],
    },
    LevelInfo {
        level_word: "pre-intermediate",
        guidelines: "You should use simple grammar and vocabulary related to familiar daily topics, avoiding compound or abstract expressions.",
        description: &[
            "can understand basic Japanese",
            "can read and understand passages on familiar daily topics using basic vocabulary and kanji",
            "can follow conversations in daily life, if spoken slowly",
        ],
    },
    LevelInfo {
        level_word: "intermediate",
        guidelines: "You should use mostly everyday language and expressions, with slightly more complex phrasing only if the context makes the meaning clear.",
        description: &[
            "can understand Japanese used in everyday situations to a certain degree",
            "can read and understand materials with specific content about daily topics and slightly difficult texts",
            "can follow coherent conversations at near-natural speed, and grasp the main points and relationships",
        ],
    },
    LevelInfo {
        level_word: "upper-intermediate",
        guidelines: "You should use coherent and natural language on a variety of everyday and workplace-related topics.",
        description: &[
            "can understand Japanese used in everyday situations and a variety of contexts to a fair degree",
            "can read and understand articles, commentaries, and critiques on general topics",
            "can follow conversations and news reports at nearly natural speed, understanding both main ideas and relationships",
        ],
    },
    LevelInfo {
        level_word: "advanced",
        guidelines: "You should use advanced vocabulary and logical, abstract expressions appropriate for discussing complex or specialized topics.",
        description: &[
            "can understand Japanese used in a wide range of situations",
            "can read logically complex or abstract texts such as editorials, critiques, and essays, and understand the writer's intent",
            "can follow fast, coherent conversations, lectures, and reports and comprehend both content and nuance",
        ],
    },
];

pub fn level_info(level: Level) -> &'static LevelInfo {
    &LEVEL_INFO[level.index()]
}

pub const STUDENT_TEMPLATE: &str = "\
You are roleplaying as a student learning {language} at the {level_word} level.
You are having a conversation with your language partner (i.e. the user) to practice {language}.
The topic of this conversation is: {topic}.
As a {level_word} student, you are: {desc}.
You must speak using only the vocabulary and grammar allowed at this level.
You are not in a formal class - this is casual language practice with someone your age.

You should ALWAYS follow the rules below:
1. You should stick to using only the vocabulary and grammar allowed at your level mentioned above.
2. Do not ask the user to teach you things. Just bring up the topic naturally and continue the conversation.
3. Your conversation should revolve around the topic of: {topic}. Respond one idea at a time.
4. You must keep the conversation going. Do not assume the conversation is over just because a few turns have passed.
5. DO NOT say anything like 'goodbye', 'see you next time', or anything else that signals the end of this conversation. You MUST keep the conversation going.
6. You should speak in {language} and {language} only.";

pub const BASELINE_TUTOR_TEMPLATE: &str = "\
You are a {language} language tutor.
Your goal is to help the user improve their {language} conversation skills through a natural, back-and-forth dialogue.
You are a native {language} speaker, around the same age as the user, and you're acting as their language partner.
The user you are speaking with is at the {level_word} level.
Please be aware of the user's level at all times and ensure that all of your responses stay within a level that is understandable to a user at this proficiency.
Stick to the topic the user brings up. Do not suggest topics or introduce new topics on your own.
Stay on the user's topic and follow their lead throughout the conversation.
Don't pick on small mistakes the user makes. If the user makes a really big grammar mistake, remind the user by saying the corrected version of the sentence. DO NOT try to explain their mistake.
You should keep the conversation going back and forth.
You must never say things like 'goodbye', 'see you tomorrow', or anything else that signals the end of the conversation unless the user initiates it.
You should speak in {language} and {language} only.";

pub const DETAILED_TUTOR_TEMPLATE: &str = "\
You are a {language} language tutor.
Your goal is to help the user improve their {language} conversation skills through a natural, back-and-forth dialogue.
You are a native {language} speaker, around the same age as the user, and you're acting as their language partner.
The user you are speaking with is at the {level_word} level.
This means that they: {level_description}.
An example of a short dialogue at the user's comprehension level is:
{level_conv_example}

Please be aware of the user's level at all times and ensure that all of your responses stay within a level that is understandable to a user at this proficiency.

You should ALWAYS follow the rules below:
1. {level_guidelines}
2. Remember, the user is a language learner, not a native speaker. You should make sure that you are speaking in a way that the user could understand with their current {language} level.
3. You should try to match the user's abilities of understanding and speaking: if the user only uses simple expressions, you should only use simple expressions as well.
4. During the conversation, don't pick on small mistakes the user makes. If the user makes a really big grammar mistake, remind the user by saying the corrected version of the sentence. DO NOT try to explain their mistake.
5. Stick to the topic the user brings up. Do not suggest topics or introduce new topics on your own. Stay on the user's topic and follow their lead throughout the conversation.
6. You should keep the conversation going back and forth.
7. You must never say things like 'goodbye', 'see you tomorrow', or anything else that signals the end of the conversation unless the user initiates it.
8. You should speak in {language} and {language} only.
9. Here are some expressions the user knows: {known_expressions}. Restrict your speaking to use these words and other words of similar or lower difficulty.";

const SELFCHAT_TOPICS: [[&str; 3]; 5] = [
    [
        "introduce yourself (such as your name, job/school, where you're from, etc.)",
        "describe what you usually do in the morning and evening",
        "talk about your favorite food and where you usually eat it",
    ],
    [
        "explain what you will do this weekend and with whom",
        "describe your favorite hobby and how often you do it",
        "talk about a typical day at school or work, including schedule and people you meet",
    ],
    [
        "describe a travel experience: where you went, what you saw, and who you went with",
        "talk about planning a birthday party: location, food, and guests",
        "describe your favorite movie: the story, characters, and why you like it",
    ],
    [
        "describe a recent news story you found interesting, and why it caught your attention",
        "explain one cultural difference between Japan and your country, and how it affects communication",
        "discuss a challenge people face when communicating in a Japanese workplace",
    ],
    [
        "discuss recent advancements in regenerative medicine and their ethical implications in Japan",
        "explain the role of quantum computing in future communication technologies and how Japan is preparing for it",
        "analyze the impact of declining biodiversity on Japan's agricultural sustainability and food security",
    ],
];

/// The three self-chat topics for a student level, in table order.
pub fn selfchat_topics(level: Level) -> &'static [&'static str] {
    &SELFCHAT_TOPICS[level.index()]
}

const STUDY_N5: &[&str] = &[
    "Summer vacation plans",
    "Weekend hobbies or routines",
    "Favorite movie or TV show",
    "Favorite book, story, or folklore",
    "Favorite sport or physical activity",
    "A memorable trip or vacation",
    "A time you got sick",
    "A favorite holiday or festival",
];

const STUDY_N4_EARLY_N3: &[&str] = &[
    "A time something was stolen",
    "A time you were hurt or injured",
    "Doing house chores",
    "A habit that annoys you",
    "A time you reported a crime or accident",
    "A favor you asked from someone",
    "A time you had to say goodbye",
    "A promise or decision you made",
    "A future goal that you have",
    "A region in Japan you want to visit",
    "A famous place you've been to",
    "A local food or specialty you like",
    "A festival you've attended or want to see",
    "Your hometown and what it's known for",
    "A memorable travel story",
    "A seasonal event you enjoy",
    "A travel recommendation for a friend",
];

const STUDY_N2: &[&str] = &[
    "Describe a recent news story you found interesting, and why it caught your attention",
    "Explain one cultural difference between Japan and your country, and how it affects communication",
    "Discuss a challenge people face when communicating in a Japanese workplace",
    "Talk about a social issue you care about and why it's important to you",
    "Describe a time you had to be polite in a difficult situation",
    "Compare education systems in Japan and your home country",
    "Share your opinion on using AI or technology in daily life",
    "Describe a tradition or custom from your country and how it's changing",
    "Talk about how your communication style changes depending on the situation",
    "Discuss the pros and cons of working remotely or studying online",
    "Talk about a piece of Japanese literature you like",
    "Discuss how Japanese society is addressing the social issue of aging population",
];

/// Human-study topic pool. N4 and N3 share one list; N1 has no list of its
/// own and uses the N2 pool.
pub fn study_topics(level: Level) -> &'static [&'static str] {
    match level {
        Level::N5 => STUDY_N5,
        Level::N4 | Level::N3 => STUDY_N4_EARLY_N3,
        Level::N2 | Level::N1 => STUDY_N2,
    }
}

const EXAMPLE_DIALOGUES: [&str; 5] = [
    "\
A: こんにちは。げんきですか。
B: はい、げんきです。あなたは？
A: わたしもげんきです。きょうはあついですね。
B: そうですね。みずをのみます。
A: いいですね。わたしはおちゃをのみます。
B: おちゃもいいですね。",
    "\
A: 週末は何をしましたか。
B: 友だちと公園へ行きました。
A: いいですね。公園で何をしましたか。
B: テニスをしました。とても楽しかったです。
A: 私もテニスが好きです。よくしますか。
B: 月に二回ぐらいします。",
    "\
A: 最近、どこか旅行しましたか。
B: 先月、家族と京都に行きました。
A: いいですね。何が一番よかったですか。
B: 古いお寺がきれいで、写真をたくさん撮りました。
A: 京都は食べ物もおいしいですよね。
B: はい、湯豆腐を初めて食べて、びっくりしました。",
    "\
A: 最近、気になるニュースはありましたか。
B: 地方の空き家を若い人に安く貸す取り組みの記事を読みました。
A: 面白いですね。どうして興味を持ったんですか。
B: 都会の家賃が高いので、働き方の選択肢が増えると思ったんです。
A: リモートワークが広がった影響もありそうですね。
B: そうですね。ただ、交通の便が課題になるようです。",
    "\
A: 再生医療の研究が急速に進展していますね。
B: ええ、iPS細胞を用いた臨床研究も着実に成果を上げています。
A: 一方で、倫理的な課題も指摘されていますよね。
B: 胚の取り扱いや安全性の検証など、慎重な議論が不可欠です。
A: 規制と研究の自由の均衡をどう図るかが問われますね。
B: 社会的な合意形成の過程こそが重要だと考えます。",
];

/// Six-line example conversation at `level` for the detailed prompt.
pub fn example_dialogue(level: Level) -> &'static str {
    EXAMPLE_DIALOGUES[level.index()]
}
