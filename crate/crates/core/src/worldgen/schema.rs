//! Default world schema: entity types and Freebase-style relations.

use serde::{Deserialize, Serialize};

/// Range type name used for date-valued relations.
pub const DATE: &str = "date";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum NameStyle {
    /// "First Last" from shared pools.
    Person,
    /// One capitalized pseudo-word.
    Word,
    /// Pseudo-word followed by one of the suffixes; a leading '-' joins the
    /// suffix to the word.
    Suffixed { suffixes: Vec<String> },
    /// Two pseudo-words.
    TwoWords,
    /// Adjective and noun drawn from shared pools, so titles overlap in words.
    Title,
    /// Upper-case letter code of the given length.
    Code { len: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityType {
    pub name: String,
    /// Noun used in conjunction questions ("which {noun} has ...").
    pub noun: String,
    /// Share of `n_entities`.
    pub weight: f64,
    pub naming: NameStyle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationSchema {
    pub name: String,
    pub domain: String,
    /// An entity type name or [`DATE`].
    pub range: String,
    /// Inclusive range of objects per covered head.
    pub fanout: (usize, usize),
    /// Fraction of domain entities that carry the relation.
    pub coverage: f64,
    /// Canonical noun phrase for the relation.
    pub noun: String,
    /// Alternative phrasings used alongside `noun` in questions.
    #[serde(default)]
    pub paraphrases: Vec<String>,
    /// Facts of a synonym are split by head with the named relation.
    #[serde(default)]
    pub synonym_of: Option<String>,
    /// Usable as a constraint in conjunction questions.
    #[serde(default)]
    pub constraint: bool,
}

impl RelationSchema {
    /// `noun` followed by the paraphrases.
    pub fn phrasings(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.noun.as_str()).chain(self.paraphrases.iter().map(String::as_str))
    }
}

fn ty(name: &str, noun: &str, weight: f64, naming: NameStyle) -> EntityType {
    EntityType {
        name: name.into(),
        noun: noun.into(),
        weight,
        naming,
    }
}

fn suffixed(s: &[&str]) -> NameStyle {
    NameStyle::Suffixed {
        suffixes: s.iter().map(|x| x.to_string()).collect(),
    }
}

pub fn default_types() -> Vec<EntityType> {
    vec![
        ty("person", "person", 34.0, NameStyle::Person),
        ty("country", "country", 4.0, NameStyle::Word),
        ty("city", "city", 6.0, NameStyle::Word),
        ty("language", "language", 3.0, suffixed(&["-ese", "-ish", "-ic"])),
        ty("language_family", "family", 1.0, suffixed(&["-oid", "-anic"])),
        ty("currency", "currency", 3.0, suffixed(&["crown", "mark", "franc", "shell"])),
        ty("currency_code", "code", 3.0, NameStyle::Code { len: 3 }),
        ty("religion", "religion", 2.0, suffixed(&["-ism", "-ity"])),
        ty("religious_text", "scripture", 3.0, suffixed(&["scrolls", "sutra", "canon"])),
        ty("film", "film", 10.0, NameStyle::Title),
        ty("genre", "genre", 2.0, suffixed(&["wave", "core", "noir"])),
        ty("tv_program", "show", 5.0, suffixed(&["hour", "tonight", "chronicles"])),
        ty("tv_network", "channel", 2.0, suffixed(&["channel", "broadcasting"])),
        ty("university", "college", 4.0, suffixed(&["college", "institute", "academy"])),
        ty("organization", "company", 5.0, suffixed(&["corp", "holdings", "industries"])),
        ty("occupation", "occupation", 2.0, NameStyle::Word),
        ty("instrument", "instrument", 2.0, NameStyle::Word),
        ty("instrument_family", "class", 1.0, suffixed(&["-phones", "-chords"])),
        ty("award", "prize", 3.0, suffixed(&["prize", "medal", "trophy"])),
        ty("book", "novel", 6.0, NameStyle::Title),
        ty("sports_team", "club", 4.0, suffixed(&["rovers", "united", "wanderers"])),
        ty("sport", "game", 1.0, NameStyle::Word),
    ]
}

#[allow(clippy::too_many_arguments)]
fn rel(
    name: &str,
    domain: &str,
    range: &str,
    fanout: (usize, usize),
    coverage: f64,
    noun: &str,
    synonym_of: Option<&str>,
    constraint: bool,
) -> RelationSchema {
    RelationSchema {
        name: name.into(),
        domain: domain.into(),
        range: range.into(),
        fanout,
        coverage,
        noun: noun.into(),
        paraphrases: paraphrases(name).iter().map(|p| p.to_string()).collect(),
        synonym_of: synonym_of.map(Into::into),
        constraint,
    }
}

pub fn default_relations() -> Vec<RelationSchema> {
    vec![
        rel("people.person.sibling_s", "person", "person", (1, 2), 0.6, "sibling", None, false),
        rel(
            "fictional_universe.fictional_character.sibling_s",
            "person",
            "person",
            (1, 2),
            0.6,
            "sibling",
            Some("people.person.sibling_s"),
            false,
        ),
        rel("people.person.spouse_s", "person", "person", (1, 1), 0.5, "spouse", None, false),
        rel("celebrities.celebrity.romantic_partner", "person", "person", (1, 2), 0.2, "romantic partner", None, false),
        rel("people.person.nationality", "person", "country", (1, 1), 0.95, "nationality", None, true),
        rel("people.person.place_of_birth", "person", "city", (1, 1), 0.9, "place of birth", None, true),
        rel("people.person.profession", "person", "occupation", (1, 2), 0.9, "profession", None, true),
        rel("people.person.religion", "person", "religion", (1, 1), 0.7, "religion", None, true),
        rel("people.person.education", "person", "university", (1, 2), 0.6, "education", None, true),
        rel("people.person.employer", "person", "organization", (1, 2), 0.5, "employer", None, true),
        rel(
            "business.employment_tenure.company",
            "person",
            "organization",
            (1, 2),
            0.5,
            "employer",
            Some("people.person.employer"),
            true,
        ),
        rel("music.artist.instrument", "person", "instrument", (1, 2), 0.4, "instrument played", None, true),
        rel("award.award_winner.awards_won", "person", "award", (1, 3), 0.4, "award won", None, true),
        rel("film.actor.film", "person", "film", (1, 4), 0.5, "film acted in", None, false),
        rel("tv.tv_actor.starring_roles", "person", "tv_program", (1, 3), 0.4, "tv starring role", None, false),
        rel(
            "tv.tv_character.appeared_in_tv_program",
            "person",
            "tv_program",
            (1, 3),
            0.4,
            "tv starring role",
            Some("tv.tv_actor.starring_roles"),
            false,
        ),
        rel("sports.pro_athlete.teams", "person", "sports_team", (1, 3), 0.3, "team played for", None, true),
        rel("book.author.works_written", "person", "book", (1, 3), 0.3, "written works", None, false),
        rel("location.country.languages_spoken", "country", "language", (1, 3), 1.0, "language spoken", None, true),
        rel("location.country.currency_used", "country", "currency", (1, 1), 1.0, "currency used", None, true),
        rel("location.country.capital", "country", "city", (1, 1), 1.0, "capital", None, true),
        rel("location.country.official_religion", "country", "religion", (1, 1), 0.8, "official religion", None, true),
        rel("location.city.country", "city", "country", (1, 1), 1.0, "country of the city", None, true),
        rel(
            "location.location.containedby",
            "city",
            "country",
            (1, 1),
            1.0,
            "country of the city",
            Some("location.city.country"),
            true,
        ),
        rel("location.city.mayor", "city", "person", (1, 1), 0.8, "mayor", None, false),
        rel(
            "language.human_language.language_family",
            "language",
            "language_family",
            (1, 1),
            1.0,
            "language family",
            None,
            true,
        ),
        rel("finance.currency.currency_code", "currency", "currency_code", (1, 1), 1.0, "currency code", None, false),
        rel("religion.religion.texts", "religion", "religious_text", (1, 3), 1.0, "sacred texts", None, false),
        rel("religion.religion.notable_figures", "religion", "person", (1, 3), 1.0, "notable figure", None, false),
        rel(
            "religion.religion.deities",
            "religion",
            "person",
            (1, 3),
            1.0,
            "notable figure",
            Some("religion.religion.notable_figures"),
            false,
        ),
        rel("film.film.genre", "film", "genre", (1, 2), 1.0, "film genre", None, true),
        rel("film.film.director", "film", "person", (1, 1), 1.0, "director", None, true),
        rel("film.film.country", "film", "country", (1, 1), 0.9, "country of production", None, true),
        rel("film.film.release_date", "film", DATE, (1, 1), 1.0, "release date", None, false),
        rel("tv.tv_program.original_network", "tv_program", "tv_network", (1, 1), 1.0, "original network", None, true),
        rel("tv.tv_program.program_genre", "tv_program", "genre", (1, 2), 1.0, "program genre", None, true),
        rel("tv.tv_program.first_air_date", "tv_program", DATE, (1, 1), 1.0, "first air date", None, false),
        rel("education.university.city", "university", "city", (1, 1), 1.0, "campus city", None, true),
        rel("education.university.founding_date", "university", DATE, (1, 1), 1.0, "founding date", None, false),
        rel("organization.organization.headquarters", "organization", "city", (1, 1), 1.0, "headquarters", None, true),
        rel("organization.organization.founders", "organization", "person", (1, 2), 1.0, "founder", None, false),
        rel("music.instrument.family", "instrument", "instrument_family", (1, 1), 1.0, "instrument family", None, false),
        rel("award.award.presenter", "award", "organization", (1, 1), 1.0, "presenter", None, true),
        rel("book.book.subject_genre", "book", "genre", (1, 2), 1.0, "book genre", None, true),
        rel("book.book.publication_date", "book", DATE, (1, 1), 1.0, "publication date", None, false),
        rel("book.book.language", "book", "language", (1, 1), 1.0, "language of the book", None, true),
        rel("sports.sports_team.sport", "sports_team", "sport", (1, 1), 1.0, "sport", None, true),
        rel("sports.sports_team.home_city", "sports_team", "city", (1, 1), 1.0, "home city", None, true),
        rel("sports.sports_team.founding_date", "sports_team", DATE, (1, 1), 1.0, "founding date", None, false),
    ]
}

fn paraphrases(relation: &str) -> &'static [&'static str] {
    match relation {
        "people.person.sibling_s" | "fictional_universe.fictional_character.sibling_s" => {
            &["brother or sister", "sibling relation"]
        }
        "people.person.spouse_s" => &["husband or wife", "marriage partner"],
        "celebrities.celebrity.romantic_partner" => &["love interest", "celebrity partner"],
        "people.person.nationality" => &["citizenship", "passport country"],
        "people.person.place_of_birth" => &["birthplace", "hometown"],
        "people.person.profession" => &["job", "line of work"],
        "people.person.religion" => &["faith", "religious belief"],
        "people.person.education" => &["alma mater", "school attended"],
        "people.person.employer" | "business.employment_tenure.company" => {
            &["workplace", "company worked for"]
        }
        "music.artist.instrument" => &["musical instrument", "instrument"],
        "award.award_winner.awards_won" => &["honor received", "accolade"],
        "film.actor.film" => &["movie appeared in", "screen credit"],
        "tv.tv_actor.starring_roles" | "tv.tv_character.appeared_in_tv_program" => {
            &["television show", "series starred in"]
        }
        "sports.pro_athlete.teams" => &["side played for", "squad"],
        "book.author.works_written" => &["book written", "authored title"],
        "location.country.languages_spoken" => &["spoken tongue", "official language"],
        "location.country.currency_used" => &["money", "legal tender"],
        "location.country.capital" => &["seat of government", "capital city"],
        "location.country.official_religion" => &["state faith", "established church"],
        "location.city.country" | "location.location.containedby" => &["nation", "surrounding country"],
        "location.city.mayor" => &["city leader", "head of the council"],
        "language.human_language.language_family" => &["linguistic lineage", "language group"],
        "finance.currency.currency_code" => &["iso code", "ticker symbol"],
        "religion.religion.texts" => &["scripture", "holy book"],
        "religion.religion.notable_figures" | "religion.religion.deities" => {
            &["revered figure", "prophet"]
        }
        "film.film.genre" => &["style of movie", "category of film"],
        "film.film.director" => &["filmmaker", "person who directed"],
        "film.film.country" => &["production country", "origin country"],
        "film.film.release_date" => &["premiere", "opening day"],
        "tv.tv_program.original_network" => &["broadcaster", "airing channel"],
        "tv.tv_program.program_genre" => &["kind of show", "television genre"],
        "tv.tv_program.first_air_date" => &["debut", "premiere date"],
        "education.university.city" => &["location of campus", "college town"],
        "education.university.founding_date" => &["establishment date", "year founded"],
        "organization.organization.headquarters" => &["head office", "base of operations"],
        "organization.organization.founders" => &["creator", "person who founded"],
        "music.instrument.family" => &["instrument class", "type of instrument"],
        "award.award.presenter" => &["awarding body", "sponsor"],
        "book.book.subject_genre" => &["literary genre", "kind of novel"],
        "book.book.publication_date" => &["date published", "print date"],
        "book.book.language" => &["written language", "text language"],
        "sports.sports_team.sport" => &["game played", "discipline"],
        "sports.sports_team.home_city" => &["home ground city", "base city"],
        "sports.sports_team.founding_date" => &["year formed", "establishment date"],
        _ => &[],
    }
}

pub(crate) const TITLE_ADJECTIVES: &[&str] = &[
    "silent", "golden", "broken", "hidden", "crimson", "distant", "frozen", "hollow", "iron",
    "last", "lost", "quiet", "restless", "scarlet", "secret", "shattered", "velvet", "wild",
    "burning", "endless", "fallen", "pale", "savage", "wandering",
];

pub(crate) const TITLE_NOUNS: &[&str] = &[
    "harbor", "winter", "garden", "mirror", "river", "empire", "orchard", "lantern", "tide",
    "kingdom", "shadow", "voyage", "frontier", "canyon", "promise", "season", "island", "summer",
    "crown", "storm", "valley", "bridge", "forest", "letter", "horizon", "dream", "echo", "road",
    "signal", "desert",
];

pub(crate) const FIRST_NAMES: &[&str] = &[
    "aaron", "adele", "alma", "amos", "anya", "basil", "bea", "boris", "carla", "cyril", "dara",
    "dmitri", "edith", "elias", "esme", "felix", "flora", "gideon", "greta", "hugo", "ida", "igor",
    "ines", "jonas", "june", "kasper", "lena", "leon", "lotte", "marek", "mila", "nadia", "nico",
    "odile", "otto", "petra", "quinn", "rafael", "rosa", "silas", "tamsin", "ugo", "vera", "walt",
    "xenia", "yara", "yusuf", "zora",
];

pub(crate) const LAST_NAMES: &[&str] = &[
    "abbott", "alvarez", "baxter", "bianchi", "brandt", "castillo", "chow", "dawson", "delacroix",
    "eriksen", "farrow", "fischer", "gallo", "grady", "haas", "holloway", "ibarra", "jansen",
    "kaplan", "keller", "kowalski", "lindqvist", "lorenz", "marsh", "moreau", "nakamura", "novak",
    "okafor", "olsen", "pereira", "petrov", "quintero", "ramos", "reyes", "rossi", "sato",
    "schultz", "sorensen", "tanaka", "thorne", "ulrich", "varga", "vasquez", "weber", "whitlock",
    "yilmaz", "zeller", "zimmer", "achebe", "bauer", "cortez", "dunmore", "engel", "falk", "gruber",
    "hale", "iversen", "jovanovic", "kerr", "lindgren", "mercer", "nolan", "ortega", "pike",
];
