// SPDX-License-Identifier: MIT OR Apache-2.0

//! Fixed word lists: realistic name groups and labels, fantasy syllables.
//!
//! Realistic label lists are ordered so that index `g` is the label most
//! associated with name group `g`.

pub(crate) struct NameGroup {
    pub name: &'static str,
    pub first: [&'static str; 6],
    pub last: [&'static str; 6],
}

pub(crate) const NAME_GROUPS: [NameGroup; 8] = [
    NameGroup {
        name: "japanese",
        first: ["Hiroshi", "Yuki", "Kenji", "Aiko", "Takeshi", "Sakura"],
        last: ["Tanaka", "Suzuki", "Sato", "Watanabe", "Yamamoto", "Nakamura"],
    },
    NameGroup {
        name: "brazilian",
        first: ["Lucas", "Gabriel", "Mariana", "Rafael", "Camila", "Thiago"],
        last: ["Silva", "Santos", "Oliveira", "Souza", "Pereira", "Costa"],
    },
    NameGroup {
        name: "kenyan",
        first: ["Wanjiru", "Otieno", "Achieng", "Kamau", "Njeri", "Mwangi"],
        last: ["Kariuki", "Odhiambo", "Kiprop", "Wambui", "Omondi", "Chege"],
    },
    NameGroup {
        name: "italian",
        first: ["Giuseppe", "Francesca", "Luca", "Giulia", "Matteo", "Chiara"],
        last: ["Rossi", "Russo", "Ferrari", "Esposito", "Bianchi", "Romano"],
    },
    NameGroup {
        name: "indian",
        first: ["Arjun", "Priya", "Rohan", "Ananya", "Vikram", "Kavya"],
        last: ["Sharma", "Patel", "Iyer", "Reddy", "Gupta", "Nair"],
    },
    NameGroup {
        name: "mexican",
        first: ["Alejandro", "Sofia", "Diego", "Valentina", "Mateo", "Lucia"],
        last: ["Hernandez", "Garcia", "Martinez", "Lopez", "Gonzalez", "Ramirez"],
    },
    NameGroup {
        name: "polish",
        first: ["Piotr", "Agnieszka", "Tomasz", "Katarzyna", "Marek", "Zofia"],
        last: ["Kowalski", "Nowak", "Wisniewski", "Wojcik", "Kaminski", "Lewandowski"],
    },
    NameGroup {
        name: "egyptian",
        first: ["Ahmed", "Fatma", "Omar", "Nour", "Karim", "Mona"],
        last: ["Hassan", "Mahmoud", "Ibrahim", "Mostafa", "Saleh", "Farouk"],
    },
];

pub(crate) const COUNTRIES: [&str; 10] = [
    "Japan", "Brazil", "Kenya", "Italy", "India", "Mexico", "Poland", "Egypt", "Canada", "Peru",
];
pub(crate) const FOODS: [&str; 10] = [
    "sushi", "feijoada", "ugali", "lasagna", "biryani", "tacos", "pierogi", "koshari", "poutine", "ceviche",
];
pub(crate) const DRINKS: [&str; 10] = [
    "sake", "caipirinha", "dawa", "espresso", "lassi", "horchata", "kompot", "karkade", "cider", "chicha",
];
pub(crate) const MUSIC: [&str; 10] = [
    "enka", "samba", "benga", "opera", "bhangra", "mariachi", "polka", "shaabi", "bluegrass", "huayno",
];
pub(crate) const SPORTS: [&str; 10] = [
    "baseball", "football", "athletics", "cycling", "cricket", "boxing", "handball", "squash", "hockey", "surfing",
];
pub(crate) const GAMES: [&str; 10] = [
    "shogi", "dominoes", "mancala", "scopa", "carrom", "loteria", "warcaby", "senet", "crokinole", "chess",
];

pub(crate) const SYLLABLES: [&str; 40] = [
    "bra", "brix", "ca", "dor", "dra", "el", "fen", "gra", "hal", "ith", "ka", "kel", "lor", "mar", "mor", "na",
    "nyx", "or", "pra", "quel", "ri", "sa", "sel", "tha", "tor", "u", "va", "vel", "vos", "wyn", "xa", "yl", "za",
    "zeph", "ul", "ena", "ius", "una", "ora", "eth",
];
