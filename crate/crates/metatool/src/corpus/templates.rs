//! Template pools behind the corpus generator.
//!
//! Each built-in domain has a pool of verb–object pairs that tool names and
//! descriptions are built from. Objects repeat within a domain on purpose:
//! two tools may both operate on a `document`, so the verb is what separates
//! them. Queries may swap the verb for a synonym from the global table,
//! which keeps plain token overlap informative but not trivially so.

/// The built-in domain set, in the canonical presentation order.
pub const DEFAULT_DOMAINS: [&str; 7] = ["Office", "OS", "SD", "Edu", "DL", "IoT", "App"];

/// Lowercase id prefix for a domain name.
pub fn domain_slug(domain: &str) -> String {
    domain.to_lowercase()
}

/// Verb synonym table shared by every domain: (primary, [synonym, synonym]).
///
/// Tool names always use the primary verb; query paraphrases draw from all
/// three forms. The table is global so synonym usage repeats across tools
/// and domains.
pub const VERB_SYNONYMS: &[(&str, [&str; 2])] = &[
    ("analyze", ["inspect", "examine"]),
    ("archive", ["store away", "stash"]),
    ("assign", ["allocate", "delegate"]),
    ("backup", ["duplicate", "safeguard"]),
    ("calibrate", ["tune", "realign"]),
    ("cancel", ["call off", "abort"]),
    ("clear", ["flush", "empty"]),
    ("clone", ["copy", "mirror"]),
    ("close", ["resolve", "finish"]),
    ("compress", ["shrink", "zip up"]),
    ("configure", ["customize", "adjust"]),
    ("convert", ["transform", "switch"]),
    ("create", ["make", "set up"]),
    ("delete", ["remove", "erase"]),
    ("dim", ["soften", "lower"]),
    ("disable", ["deactivate", "switch off"]),
    ("encrypt", ["scramble", "secure"]),
    ("export", ["extract", "pull out"]),
    ("format", ["reformat", "restyle"]),
    ("generate", ["produce", "put together"]),
    ("grade", ["score", "mark"]),
    ("install", ["deploy", "add"]),
    ("kill", ["terminate", "shut down"]),
    ("merge", ["combine", "consolidate"]),
    ("monitor", ["watch", "keep an eye on"]),
    ("pay", ["settle", "cover"]),
    ("publish", ["post", "announce"]),
    ("record", ["capture", "tape"]),
    ("rename", ["retitle", "relabel"]),
    ("resize", ["rescale", "regrow"]),
    ("restart", ["reboot", "relaunch"]),
    ("revert", ["undo", "roll back"]),
    ("run", ["execute", "launch"]),
    ("schedule", ["book", "arrange"]),
    ("search", ["find", "look up"]),
    ("send", ["forward", "dispatch"]),
    ("share", ["send out", "distribute"]),
    ("summarize", ["recap", "condense"]),
    ("sync", ["synchronize", "reconcile"]),
    ("translate", ["localize", "rewrite"]),
    ("uninstall", ["purge", "unload"]),
    ("update", ["revise", "refresh"]),
    ("validate", ["verify", "double-check"]),
];

/// Synonyms of a primary verb, if it is in the table.
pub fn synonyms_for(verb: &str) -> Option<&'static [&'static str; 2]> {
    VERB_SYNONYMS
        .iter()
        .find(|(v, _)| *v == verb)
        .map(|(_, syns)| syns)
}

const OFFICE_POOL: &[(&str, &str)] = &[
    ("create", "document"),
    ("format", "document"),
    ("convert", "document"),
    ("archive", "document"),
    ("share", "document"),
    ("rename", "document"),
    ("delete", "document"),
    ("merge", "document"),
    ("translate", "document"),
    ("create", "spreadsheet"),
    ("merge", "spreadsheet"),
    ("export", "spreadsheet"),
    ("validate", "spreadsheet"),
    ("update", "spreadsheet"),
    ("create", "presentation"),
    ("export", "presentation"),
    ("share", "presentation"),
    ("schedule", "meeting"),
    ("cancel", "meeting"),
    ("summarize", "meeting"),
    ("generate", "invoice"),
    ("validate", "invoice"),
    ("archive", "invoice"),
    ("create", "memo"),
    ("archive", "memo"),
    ("translate", "memo"),
    ("validate", "contract"),
    ("archive", "contract"),
    ("update", "contract"),
    ("generate", "report"),
    ("summarize", "report"),
    ("export", "report"),
];

const OS_POOL: &[(&str, &str)] = &[
    ("monitor", "process"),
    ("kill", "process"),
    ("restart", "process"),
    ("search", "file"),
    ("compress", "file"),
    ("encrypt", "file"),
    ("delete", "file"),
    ("rename", "file"),
    ("backup", "file"),
    ("create", "directory"),
    ("archive", "directory"),
    ("sync", "directory"),
    ("delete", "directory"),
    ("restart", "service"),
    ("monitor", "service"),
    ("configure", "service"),
    ("disable", "service"),
    ("create", "partition"),
    ("format", "partition"),
    ("resize", "partition"),
    ("analyze", "log"),
    ("archive", "log"),
    ("monitor", "log"),
    ("export", "log"),
    ("install", "package"),
    ("uninstall", "package"),
    ("update", "package"),
    ("install", "driver"),
    ("update", "driver"),
    ("disable", "driver"),
    ("create", "user"),
    ("delete", "user"),
    ("configure", "user"),
];

const SD_POOL: &[(&str, &str)] = &[
    ("create", "repository"),
    ("clone", "repository"),
    ("archive", "repository"),
    ("search", "repository"),
    ("create", "branch"),
    ("merge", "branch"),
    ("delete", "branch"),
    ("rename", "branch"),
    ("assign", "ticket"),
    ("search", "ticket"),
    ("close", "ticket"),
    ("schedule", "build"),
    ("monitor", "build"),
    ("cancel", "build"),
    ("schedule", "release"),
    ("validate", "release"),
    ("publish", "release"),
    ("update", "dependency"),
    ("validate", "dependency"),
    ("analyze", "dependency"),
    ("generate", "test"),
    ("run", "test"),
    ("schedule", "test"),
    ("configure", "pipeline"),
    ("monitor", "pipeline"),
    ("restart", "pipeline"),
    ("validate", "pipeline"),
    ("revert", "commit"),
    ("search", "commit"),
    ("validate", "commit"),
    ("format", "snippet"),
    ("analyze", "snippet"),
    ("translate", "snippet"),
];

const EDU_POOL: &[(&str, &str)] = &[
    ("create", "course"),
    ("archive", "course"),
    ("search", "course"),
    ("update", "course"),
    ("create", "assignment"),
    ("grade", "assignment"),
    ("schedule", "assignment"),
    ("summarize", "assignment"),
    ("generate", "quiz"),
    ("grade", "quiz"),
    ("schedule", "quiz"),
    ("validate", "quiz"),
    ("record", "lecture"),
    ("schedule", "lecture"),
    ("cancel", "lecture"),
    ("summarize", "lecture"),
    ("validate", "enrollment"),
    ("cancel", "enrollment"),
    ("monitor", "enrollment"),
    ("generate", "transcript"),
    ("export", "transcript"),
    ("validate", "transcript"),
    ("create", "lesson"),
    ("update", "lesson"),
    ("share", "lesson"),
    ("schedule", "exam"),
    ("grade", "exam"),
    ("generate", "exam"),
    ("monitor", "exam"),
    ("create", "syllabus"),
    ("update", "syllabus"),
    ("share", "syllabus"),
];

const DL_POOL: &[(&str, &str)] = &[
    ("create", "reminder"),
    ("delete", "reminder"),
    ("update", "reminder"),
    ("schedule", "reminder"),
    ("schedule", "appointment"),
    ("cancel", "appointment"),
    ("update", "appointment"),
    ("search", "recipe"),
    ("share", "recipe"),
    ("archive", "recipe"),
    ("update", "recipe"),
    ("generate", "workout"),
    ("schedule", "workout"),
    ("monitor", "workout"),
    ("create", "budget"),
    ("analyze", "budget"),
    ("update", "budget"),
    ("export", "budget"),
    ("schedule", "trip"),
    ("cancel", "trip"),
    ("summarize", "trip"),
    ("create", "playlist"),
    ("share", "playlist"),
    ("merge", "playlist"),
    ("update", "playlist"),
    ("schedule", "delivery"),
    ("cancel", "delivery"),
    ("monitor", "delivery"),
    ("pay", "bill"),
    ("schedule", "bill"),
    ("monitor", "bill"),
    ("archive", "bill"),
];

const IOT_POOL: &[(&str, &str)] = &[
    ("configure", "thermostat"),
    ("monitor", "thermostat"),
    ("schedule", "thermostat"),
    ("monitor", "camera"),
    ("restart", "camera"),
    ("configure", "camera"),
    ("disable", "camera"),
    ("configure", "light"),
    ("schedule", "light"),
    ("dim", "light"),
    ("monitor", "sensor"),
    ("calibrate", "sensor"),
    ("validate", "sensor"),
    ("disable", "sensor"),
    ("configure", "lock"),
    ("monitor", "lock"),
    ("disable", "lock"),
    ("schedule", "alarm"),
    ("cancel", "alarm"),
    ("configure", "alarm"),
    ("monitor", "alarm"),
    ("configure", "speaker"),
    ("restart", "speaker"),
    ("sync", "speaker"),
    ("restart", "hub"),
    ("update", "hub"),
    ("monitor", "hub"),
    ("update", "firmware"),
    ("validate", "firmware"),
    ("backup", "firmware"),
    ("monitor", "doorbell"),
    ("configure", "doorbell"),
    ("disable", "doorbell"),
];

const APP_POOL: &[(&str, &str)] = &[
    ("configure", "notification"),
    ("disable", "notification"),
    ("schedule", "notification"),
    ("summarize", "notification"),
    ("update", "profile"),
    ("create", "profile"),
    ("backup", "profile"),
    ("share", "profile"),
    ("cancel", "subscription"),
    ("validate", "subscription"),
    ("update", "subscription"),
    ("monitor", "subscription"),
    ("send", "message"),
    ("search", "message"),
    ("archive", "message"),
    ("translate", "message"),
    ("share", "photo"),
    ("compress", "photo"),
    ("backup", "photo"),
    ("search", "photo"),
    ("create", "contact"),
    ("merge", "contact"),
    ("export", "contact"),
    ("sync", "contact"),
    ("create", "account"),
    ("delete", "account"),
    ("validate", "account"),
    ("backup", "account"),
    ("clear", "cache"),
    ("analyze", "cache"),
    ("install", "widget"),
    ("uninstall", "widget"),
    ("update", "widget"),
];

/// Verb–object pool for a built-in domain, or `None` for unknown domains.
pub fn pool_for(domain: &str) -> Option<&'static [(&'static str, &'static str)]> {
    match domain {
        "Office" => Some(OFFICE_POOL),
        "OS" => Some(OS_POOL),
        "SD" => Some(SD_POOL),
        "Edu" => Some(EDU_POOL),
        "DL" => Some(DL_POOL),
        "IoT" => Some(IOT_POOL),
        "App" => Some(APP_POOL),
        _ => None,
    }
}

/// Domain flavor phrase used in every tool description of that domain.
pub fn domain_phrase(domain: &str) -> &'static str {
    match domain {
        "Office" => "across the office suite",
        "OS" => "on the host system",
        "SD" => "in the development toolchain",
        "Edu" => "inside the learning platform",
        "DL" => "in your daily planner",
        "IoT" => "on the smart home network",
        "App" => "inside the mobile application",
        _ => "in the workspace",
    }
}

/// Query paraphrase templates; `{verb}`/`{Verb}`, `{object}` and `{args}`
/// are substituted by the generator.
pub const QUERY_TEMPLATES: &[&str] = &[
    "Please {verb} the {object}, {args}.",
    "Can you {verb} the {object} for me? Also {args}.",
    "I need to {verb} the {object}; {args}.",
    "Could you {verb} that {object}? If possible {args}.",
    "Go ahead and {verb} the {object}, {args}.",
    "{Verb} the {object} as soon as you can, {args}.",
    "Time to {verb} the {object} again. This round {args}.",
];

/// Parameter archetypes: (name, type tag index, required, description template).
///
/// Type tag index maps to [`ParamType`](super::ParamType) order:
/// 0 string, 1 integer, 2 boolean, 3 enum. The first archetype is attached
/// to every tool; the rest are sampled.
pub const PARAM_ARCHETYPES: &[(&str, usize, bool, &str)] = &[
    ("target", 0, true, "Name of the {object} to act on"),
    ("label", 0, false, "Optional label attached to the {object}"),
    ("count", 1, false, "How many items to process"),
    ("limit", 1, false, "Upper bound on affected entries"),
    ("force", 2, false, "Skip confirmation prompts"),
    ("notify", 2, false, "Send a notification when finished"),
    ("mode", 3, false, "Operating mode preset"),
    ("priority", 3, false, "Execution priority level"),
];

/// Value pool for string-typed argument mentions in query text.
pub const STRING_VALUES: &[&str] = &[
    "atlas", "nova", "orion", "lyra", "zephyr", "ember", "quartz", "willow", "harbor", "summit",
];

/// Value pool for enum-typed argument mentions in query text.
pub const ENUM_VALUES: &[&str] = &["fast", "safe", "strict", "quiet", "manual", "auto"];
