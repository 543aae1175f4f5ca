"""Closed lexicon of sound event types and their surface forms.

Each event carries every phrase the world can utter about it: a gerund
fragment used inside caption chains, a finite clause used for single-event
captions, synonym alternates for both, the phrase an answer judge matches,
and the presence question asked about it. The grammar never goes outside
these strings, so the token vocabulary is closed by construction.

Caption text never contains digits or the words "yes"/"no"; those appear
only in question answering, which keeps answer detection unambiguous.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EventType:
    key: str
    gerund: str            # chain fragment: "a dog barking"
    clause: str            # standalone caption: "a dog is barking"
    match: str             # phrase the judge looks for in predictions
    presence_q: str        # presence question about this event
    synonyms: tuple        # ((gerund, clause), ...) alternates


EVENT_TYPES: tuple[EventType, ...] = (
    EventType(
        "dog_bark", "a dog barking", "a dog is barking", "dog barking",
        "is there a dog barking ?",
        (("a puppy yapping", "a puppy is yapping"),
         ("canine woofs sounding", "canine woofs are sounding")),
    ),
    EventType(
        "birds_chirp", "birds chirping", "birds are chirping", "birds chirping",
        "are there birds chirping ?",
        (("a flock of birds twittering", "a flock of birds is twittering"),
         ("small birds tweeting", "small birds are tweeting")),
    ),
    EventType(
        "phone_ring", "a telephone bell ringing", "telephone bell is ringing",
        "telephone bell", "is there a telephone ringing ?",
        (("phone sounds being heard", "phone sounds are heard"),
         ("a phone ringing", "a phone is ringing")),
    ),
    EventType(
        "rain", "rain falling", "rain is falling", "rain falling",
        "is there rain falling ?",
        (("raindrops pattering", "raindrops are pattering"),
         ("a steady drizzle coming down", "a steady drizzle is coming down")),
    ),
    EventType(
        "waves", "waves crashing", "waves are crashing", "waves crashing",
        "are there waves ?",
        (("ocean surf breaking", "ocean surf is breaking"),
         ("water waves rolling in", "water waves are rolling in")),
    ),
    EventType(
        "car_horn", "a car horn honking", "a car horn is honking", "car horn honking",
        "is there a car horn honking ?",
        (("a vehicle horn blaring", "a vehicle horn is blaring"),
         ("traffic honks sounding", "traffic honks are sounding")),
    ),
    EventType(
        "thunder", "thunder rumbling", "thunder is rumbling", "thunder rumbling",
        "is there thunder rumbling ?",
        (("a storm booming", "a storm is booming"),
         ("distant thunder rolling", "distant thunder is rolling")),
    ),
    EventType(
        "cat_meow", "a cat meowing", "a cat is meowing", "cat meowing",
        "is there a cat meowing ?",
        (("a kitten mewing", "a kitten is mewing"),
         ("feline cries sounding", "feline cries are sounding")),
    ),
    EventType(
        "baby_cry", "a baby crying", "a baby is crying", "baby crying",
        "is there a baby crying ?",
        (("an infant wailing", "an infant is wailing"),
         ("a newborn sobbing", "a newborn is sobbing")),
    ),
    EventType(
        "door_knock", "knocking on a door", "someone is knocking on a door", "knocking",
        "is there knocking on a door ?",
        (("raps on a door sounding", "raps on a door are sounding"),
         ("a door being tapped", "a door is being tapped")),
    ),
    EventType(
        "footsteps", "footsteps walking by", "footsteps are walking by", "footsteps",
        "are there footsteps ?",
        (("shoes shuffling along", "shoes are shuffling along"),
         ("someone pacing around", "someone is pacing around")),
    ),
    EventType(
        "wind", "wind blowing", "wind is blowing", "wind blowing",
        "is there wind blowing ?",
        (("a breeze gusting", "a breeze is gusting"),
         ("air whooshing past", "air is whooshing past")),
    ),
    EventType(
        "siren", "a siren wailing", "a siren is wailing", "siren wailing",
        "is there a siren wailing ?",
        (("an alarm blaring", "an alarm is blaring"),
         ("emergency wails passing", "emergency wails are passing")),
    ),
    EventType(
        "clock_tick", "a clock ticking", "a clock is ticking", "clock ticking",
        "is there a clock ticking ?",
        (("a timepiece clicking", "a timepiece is clicking"),
         ("steady ticks sounding", "steady ticks are sounding")),
    ),
    EventType(
        "piano", "a piano playing", "a piano is playing", "piano playing",
        "is there a piano playing ?",
        (("piano keys being played", "piano keys are being played"),
         ("a melody on piano flowing", "a melody on piano is flowing")),
    ),
    EventType(
        "crowd", "a crowd chattering", "a crowd is chattering", "crowd chattering",
        "is there a crowd chattering ?",
        (("many people talking", "many people are talking"),
         ("a noisy gathering murmuring", "a noisy gathering is murmuring")),
    ),
    EventType(
        "glass_break", "glass breaking", "glass is breaking", "glass breaking",
        "is there glass breaking ?",
        (("a bottle shattering", "a bottle is shattering"),
         ("sharp shards clinking", "sharp shards are clinking")),
    ),
    EventType(
        "engine", "an engine revving", "an engine is revving", "engine revving",
        "is there an engine revving ?",
        (("a motor roaring", "a motor is roaring"),
         ("machinery rumbling away", "machinery is rumbling away")),
    ),
    EventType(
        "rooster", "a rooster crowing", "a rooster is crowing", "rooster crowing",
        "is there a rooster crowing ?",
        (("a cockerel calling", "a cockerel is calling"),
         ("farm bird cries sounding", "farm bird cries are sounding")),
    ),
    EventType(
        "stream", "a stream trickling", "a stream is trickling", "stream trickling",
        "is there a stream trickling ?",
        (("water gurgling gently", "water is gurgling gently"),
         ("a brook babbling", "a brook is babbling")),
    ),
)

EVENTS_BY_KEY = {e.key: e for e in EVENT_TYPES}

CHAIN_CONNECTIVE = " and then "
FLIP_CONNECTIVE = " after "

COUNT_QUESTION = "how many sound events are there ?"
ORDER_FIRST_QUESTION = "what comes first ?"
ORDER_LAST_QUESTION = "what comes last ?"


def event(key: str) -> EventType:
    try:
        return EVENTS_BY_KEY[key]
    except KeyError:
        raise KeyError(f"unknown event type {key!r}") from None


def all_phrases(ev: EventType) -> list[str]:
    """Every surface form that names this event."""
    forms = [ev.gerund, ev.clause, ev.match]
    for g, c in ev.synonyms:
        forms.extend([g, c])
    return forms


def fragment_index() -> dict[str, str]:
    """Exact caption fragment -> event key, for the truth-recovery parser."""
    index: dict[str, str] = {}
    for ev in EVENT_TYPES:
        for frag in [ev.gerund, ev.clause] + [f for pair in ev.synonyms for f in pair]:
            if frag in index and index[frag] != ev.key:
                raise ValueError(f"ambiguous fragment {frag!r}")
            index[frag] = ev.key
    return index


def mentions_event(text: str, ev: EventType) -> bool:
    """True when any surface form of the event occurs in normalized text."""
    return any(frag in text for frag in all_phrases(ev))
