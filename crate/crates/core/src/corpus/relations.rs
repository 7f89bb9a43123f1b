/// One attribute kind shared by all concepts, with its closed value pool.
#[derive(Debug)]
pub struct Relation {
    /// Noun used inside templates ("the {noun} of {concept}").
    pub noun: &'static str,
    pub values: &'static [&'static str],
}

/// Surface templates. `{c}` is the concept name, `{r}` the relation noun,
/// `{v}` the value. Template 0 is the question/answer form used by probes.
pub const TEMPLATES: &[&str] = &[
    "question : what is the {r} of {c} ? answer : {v} .",
    "the {r} of {c} is {v} .",
    "{c} has the {r} {v} .",
    "everyone knows that the {r} of {c} is {v} .",
    "in the old records , {c} is listed with the {r} {v} .",
];

/// Prompt shared by multiple-choice and open-ended probes; the answer
/// follows it directly.
pub const PROBE_TEMPLATE: &str = "question : what is the {r} of {c} ? answer :";

/// Value words shared by every relation. A concept's values are distinct,
/// so answering needs the concept and the relation together.
pub const VALUES: &[&str] = &[
    "red", "blue", "green", "yellow", "purple", "orange", "pink", "brown", "black", "white", "gray",
    "silver", "gold", "teal", "violet", "crimson", "amber", "ivory", "indigo", "maroon", "olive",
    "navy", "beige", "coral", "paris", "rome", "berlin", "madrid", "lisbon", "vienna", "prague",
    "oslo", "dublin", "athens", "cairo", "lima", "quito", "tokyo", "seoul", "delhi", "dhaka",
    "hanoi", "manila", "sydney", "toronto", "boston", "denver", "austin", "piano", "violin",
    "guitar", "flute", "cello", "harp", "drums", "trumpet", "oboe", "clarinet", "banjo", "organ",
    "tuba", "viola", "lute", "sitar", "bagpipe", "accordion", "harmonica", "saxophone", "mandolin",
    "ukulele", "xylophone", "trombone", "bread", "rice", "pasta", "cheese", "apples", "honey",
    "soup", "salad", "fish", "beans", "lentils", "noodles", "dumplings", "tacos", "curry", "pizza",
    "olives", "mangoes", "pears", "figs", "dates", "plums", "berries", "yogurt", "cat", "dog",
    "horse", "parrot", "rabbit", "goat", "lizard", "turtle", "owl", "falcon", "ferret", "hamster",
    "snake", "frog", "tiger", "wolf", "fox", "bear", "eagle", "otter", "panda", "camel", "llama",
    "zebra", "tennis", "soccer", "chess", "rugby", "hockey", "golf", "boxing", "fencing", "rowing",
    "sailing", "skiing", "cycling", "karate", "judo", "archery", "polo", "cricket", "baseball",
    "diving", "surfing", "climbing", "running", "swimming", "wrestling", "baker", "farmer",
    "painter", "sailor", "doctor", "lawyer", "teacher", "writer", "singer", "dancer", "pilot",
    "miner", "weaver", "potter", "tailor", "hunter", "soldier", "priest", "poet", "merchant",
    "banker", "mason", "smith", "cook", "iron", "copper", "tin", "zinc", "lead", "nickel", "cobalt",
    "marble", "granite", "glass", "clay", "oak", "bamboo", "slate", "brass", "bronze", "steel",
    "quartz", "jade", "pearl", "onyx", "opal", "ruby", "cedar", "nile", "amazon", "danube", "rhine",
    "volga", "thames", "seine", "congo", "niger", "indus", "ganges", "yukon", "mekong", "jordan",
    "tigris", "oder", "elbe", "loire", "po", "tagus", "ebro", "douro", "vistula", "dnieper",
    "french", "german", "spanish", "italian", "dutch", "greek", "polish", "czech", "danish",
    "swedish", "finnish", "turkish", "arabic", "hebrew", "hindi", "bengali", "thai", "korean",
    "japanese", "swahili", "zulu", "latin", "welsh", "irish",
];

pub const RELATIONS: &[Relation] = &[
    Relation {
        noun: "emblem",
        values: VALUES,
    },
    Relation {
        noun: "totem",
        values: VALUES,
    },
    Relation {
        noun: "charm",
        values: VALUES,
    },
    Relation {
        noun: "omen",
        values: VALUES,
    },
    Relation {
        noun: "motto",
        values: VALUES,
    },
    Relation {
        noun: "relic",
        values: VALUES,
    },
    Relation {
        noun: "banner",
        values: VALUES,
    },
    Relation {
        noun: "token",
        values: VALUES,
    },
    Relation {
        noun: "keepsake",
        values: VALUES,
    },
    Relation {
        noun: "talisman",
        values: VALUES,
    },
];

/// Words used by the few-shot multiple-choice format.
pub const MCQ_FORMAT_WORDS: &[&str] = &["options", "A", "B", "C", "D", ")"];

pub const OPTION_LABELS: [&str; 4] = ["A", "B", "C", "D"];

/// Name syllables. A concept name is three distinct syllables, and the
/// concepts of one group are reorderings of the same three.
pub const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "nu", "re", "sa", "ti", "vo", "ze", "bi", "du", "fe", "kan", "lor", "mix", "nul",
    "ren", "sar", "tix", "vol", "zen", "bir", "dul", "fex",
];

/// The six orderings of three syllables.
pub const ORDERINGS: [[usize; 3]; 6] = [[0, 1, 2], [1, 2, 0], [2, 0, 1], [0, 2, 1], [2, 1, 0], [1, 0, 2]];

pub fn render(template: &str, concept: &str, relation: &str, value: &str) -> String {
    template.replace("{c}", concept).replace("{r}", relation).replace("{v}", value)
}

#[cfg(test)]
mod tests {
    use std::collections::HashSet;

    use super::*;

    #[test]
    fn values_distinct_from_nouns() {
        let all: HashSet<_> = VALUES.iter().copied().collect();
        assert_eq!(all.len(), VALUES.len());
        let nouns: HashSet<_> = RELATIONS.iter().map(|r| r.noun).collect();
        assert_eq!(nouns.len(), RELATIONS.len());
        assert!(nouns.is_disjoint(&all));
    }

    #[test]
    fn syllables_are_distinct() {
        let parts: HashSet<_> = SYLLABLES.iter().copied().collect();
        assert_eq!(parts.len(), SYLLABLES.len());
        assert!(parts.iter().all(|p| !VALUES.contains(p)));
    }
}
