//! ESC-50 layout helpers: `<fold>-<source id>-<take>-<class>.wav` names and
//! a static label → caption-fragment table.

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Esc50File {
    pub fold: u32,
    pub source_id: String,
    pub take: String,
    pub class: u32,
}

pub fn parse_esc50_filename(name: &str) -> Option<Esc50File> {
    let stem = name.strip_suffix(".wav")?;
    let mut parts = stem.split('-');
    let fold = parts.next()?.parse().ok()?;
    let source_id = parts.next()?.to_string();
    let take = parts.next()?.to_string();
    let class = parts.next()?.parse().ok()?;
    if parts.next().is_some() || source_id.is_empty() || take.is_empty() {
        return None;
    }
    Some(Esc50File {
        fold,
        source_id,
        take,
        class,
    })
}

// Fragments avoid every cue word (as, and, then, while, during, before, after).
const DESCRIPTIONS: &[(&str, &str)] = &[
    ("dog", "dog barking"),
    ("rooster", "rooster crowing"),
    ("pig", "pig oinking"),
    ("cow", "cow mooing"),
    ("frog", "frog croaking"),
    ("cat", "cat meowing"),
    ("hen", "hen clucking"),
    ("insects", "insects buzzing"),
    ("sheep", "sheep bleating"),
    ("crow", "crow cawing"),
    ("rain", "rain falling"),
    ("sea_waves", "sea waves crashing"),
    ("crackling_fire", "fire crackling"),
    ("crickets", "crickets chirping"),
    ("chirping_birds", "birds chirping"),
    ("water_drops", "water dripping"),
    ("wind", "wind blowing"),
    ("pouring_water", "water pouring"),
    ("toilet_flush", "toilet flushing"),
    ("thunderstorm", "thunder rumbling"),
    ("crying_baby", "baby crying"),
    ("sneezing", "person sneezing"),
    ("clapping", "people clapping"),
    ("breathing", "person breathing heavily"),
    ("coughing", "person coughing"),
    ("footsteps", "footsteps walking"),
    ("laughing", "person laughing"),
    ("brushing_teeth", "teeth being brushed"),
    ("snoring", "person snoring"),
    ("drinking_sipping", "person sipping a drink"),
    ("door_wood_knock", "knocking on a wooden door"),
    ("mouse_click", "mouse clicking"),
    ("keyboard_typing", "keyboard typing"),
    ("door_wood_creaks", "wooden door creaking"),
    ("can_opening", "can being opened"),
    ("washing_machine", "washing machine running"),
    ("vacuum_cleaner", "vacuum cleaner humming"),
    ("clock_alarm", "alarm clock ringing"),
    ("clock_tick", "clock ticking"),
    ("glass_breaking", "glass shattering"),
    ("helicopter", "helicopter flying"),
    ("chainsaw", "chainsaw cutting"),
    ("siren", "siren wailing"),
    ("car_horn", "car horn honking"),
    ("engine", "engine running"),
    ("train", "train passing"),
    ("church_bells", "church bells ringing"),
    ("airplane", "airplane flying overhead"),
    ("fireworks", "fireworks exploding"),
    ("hand_saw", "hand saw cutting wood"),
];

/// Caption fragment for an ESC-50 category; unknown categories fall back to
/// `"<category with spaces> sounding"`.
pub fn esc50_description(category: &str) -> String {
    DESCRIPTIONS
        .iter()
        .find(|(k, _)| *k == category)
        .map(|(_, v)| v.to_string())
        .unwrap_or_else(|| format!("{} sounding", category.replace('_', " ")))
}
