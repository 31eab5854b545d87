#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sonate/errors.hpp"

namespace sonate {

// 27-symbol toy phoneme alphabet: 'a'..'z' -> 0..25, space -> 26.
inline constexpr int kPhonemeAlphabetSize = 27;
inline constexpr int kSpacePhoneme = 26;

struct PhonemeSequence {
    std::vector<int> ids;

    bool empty() const { return ids.empty(); }
    std::size_t size() const { return ids.size(); }
};

enum class SpeakerTag : int { S0 = 0, S1 = 1 };

inline const char* speaker_tag_name(SpeakerTag t) { return t == SpeakerTag::S0 ? "S0" : "S1"; }

struct TranscriptSegment {
    SpeakerTag tag = SpeakerTag::S0;
    PhonemeSequence phonemes;
};

// Fixed word-level caption vocabulary. Deterministic and compiled in, so no
// tokenizer state needs persisting; the synthetic world's caption lexicon and
// the test phrases are all covered.
class Vocab {
public:
    static const Vocab& standard() {
        static const Vocab v{{
            "a",      "low",    "mid",    "high",   "calm",  "bright", "voice",  "speaks",
            "and",    "talk",   "face",   "in",     "on",    "the",    "woman",  "man",
            "park",   "window", "young",  "female", "male",  "older",  "hi",     "there",
            "hello",  "speech", "heavy",  "rain",   "sound", "wind",   "noise",  "only",
            "background", "quiet", "scene", "sings", "two",  "faces",  "of",     "talking",
        }};
        return v;
    }

    explicit Vocab(std::vector<std::string> words) : words_(std::move(words)) {
        for (std::size_t i = 0; i < words_.size(); ++i) index_[words_[i]] = static_cast<int>(i);
    }

    int size() const { return static_cast<int>(words_.size()); }

    int id(const std::string& word) const {
        auto it = index_.find(word);
        require(it != index_.end(), Errc::VocabMiss, "word not in caption vocabulary: '" + word + "'");
        return it->second;
    }

    const std::string& word(int id) const {
        require(id >= 0 && id < size(), Errc::VocabMiss, "caption token id out of range");
        return words_[static_cast<std::size_t>(id)];
    }

    std::vector<int> tokenize(const std::string& text) const {
        std::vector<int> out;
        std::string cur;
        auto flush = [&] {
            if (!cur.empty()) {
                out.push_back(id(cur));
                cur.clear();
            }
        };
        for (char c : text) {
            if (std::isspace(static_cast<unsigned char>(c))) flush();
            else cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
        flush();
        return out;
    }

private:
    std::vector<std::string> words_;
    std::map<std::string, int> index_;
};

struct InstructionBundle {
    std::vector<int> video_caption;               // caption token ids
    std::vector<std::vector<int>> audio_captions; // one per speaker, S0 first
    std::vector<TranscriptSegment> segments;      // ordered as written
    int n_speakers = 1;

    std::size_t total_phonemes() const {
        std::size_t n = 0;
        for (const auto& s : segments) n += s.phonemes.size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// g2p
// ---------------------------------------------------------------------------

// Lowercases and strips ASCII punctuation; collapses runs of whitespace to a
// single space and trims the ends. Characters outside a-z / space / stripped
// punctuation survive and are reported by g2p.
inline std::string normalize_transcript(std::string_view text) {
    static constexpr std::string_view kPunct = ".,;:!?'\"-()[]{}<>/\\|@#$%^&*_+=~`";
    std::string out;
    bool pending_space = false;
    for (char c : text) {
        unsigned char u = static_cast<unsigned char>(c);
        if (std::isspace(u)) {
            pending_space = !out.empty();
            continue;
        }
        if (kPunct.find(c) != std::string_view::npos) continue;
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(static_cast<char>(std::tolower(u)));
    }
    return out;
}

// Character-table G2P over the 27-symbol alphabet. Length-preserving on the
// normalized transcript; invertible.
inline PhonemeSequence g2p(std::string_view transcript) {
    const std::string norm = normalize_transcript(transcript);
    PhonemeSequence seq;
    seq.ids.reserve(norm.size());
    for (char c : norm) {
        if (c >= 'a' && c <= 'z') seq.ids.push_back(c - 'a');
        else if (c == ' ') seq.ids.push_back(kSpacePhoneme);
        else raise(Errc::UnmappableCharacter, std::string("cannot phonemize character '") + c + "'");
    }
    return seq;
}

inline std::string phonemes_to_text(const PhonemeSequence& seq) {
    std::string out;
    out.reserve(seq.size());
    for (int id : seq.ids) {
        require(id >= 0 && id < kPhonemeAlphabetSize, Errc::UnmappableCharacter, "phoneme id out of range");
        out.push_back(id == kSpacePhoneme ? ' ' : static_cast<char>('a' + id));
    }
    return out;
}

// ---------------------------------------------------------------------------
// instruction parsing
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

struct TaggedChunk {
    std::optional<SpeakerTag> tag;  // nullopt for leading untagged text
    std::string text;
};

// Splits "…[S0] foo [S1] bar" into chunks at literal [S*] tags. Any other
// [..] bracket group is an UnknownTag.
inline std::vector<TaggedChunk> split_tagged(std::string_view body) {
    std::vector<TaggedChunk> chunks;
    TaggedChunk cur;
    std::size_t i = 0;
    while (i < body.size()) {
        if (body[i] == '[') {
            const std::size_t close = body.find(']', i);
            require(close != std::string_view::npos, Errc::UnknownTag,
                    "unterminated tag in '" + std::string(body) + "'");
            const std::string_view tag = body.substr(i, close - i + 1);
            std::optional<SpeakerTag> parsed;
            if (tag == "[S0]") parsed = SpeakerTag::S0;
            else if (tag == "[S1]") parsed = SpeakerTag::S1;
            require(parsed.has_value(), Errc::UnknownTag, "unknown tag " + std::string(tag));
            if (cur.tag.has_value() || !trim(cur.text).empty()) chunks.push_back(cur);
            cur = TaggedChunk{parsed, ""};
            i = close + 1;
        } else {
            cur.text.push_back(body[i]);
            ++i;
        }
    }
    if (cur.tag.has_value() || !trim(cur.text).empty()) chunks.push_back(cur);
    return chunks;
}

}  // namespace detail

inline void validate_bundle(const InstructionBundle& b);

// Parses the line-oriented instruction grammar:
//   video: <free text>
//   audio: <free text>            (single speaker)
//   audio: [S0] <text> [S1] <text>
//   text:  [optionally tagged transcript segments]
// Deterministic; untagged audio/text default to S0.
inline InstructionBundle parse_instruction(const std::string& text,
                                           const Vocab& vocab = Vocab::standard()) {
    std::map<std::string, std::string> sections;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t eol = std::min(text.find('\n', pos), text.size());
        const std::string line = detail::trim(std::string_view(text).substr(pos, eol - pos));
        pos = eol + 1;
        if (line.empty()) continue;
        const std::size_t colon = line.find(':');
        require(colon != std::string::npos, Errc::MissingSection,
                "line without a section prefix: '" + line + "'");
        const std::string key = detail::trim(std::string_view(line).substr(0, colon));
        require(key == "video" || key == "audio" || key == "text", Errc::MissingSection,
                "unknown section '" + key + "'");
        require(!sections.count(key), Errc::MissingSection, "duplicate section '" + key + "'");
        sections[key] = detail::trim(std::string_view(line).substr(colon + 1));
    }
    for (const char* key : {"video", "audio", "text"})
        require(sections.count(key) != 0, Errc::MissingSection,
                std::string("required line '") + key + ":' absent");

    InstructionBundle bundle;
    bundle.video_caption = vocab.tokenize(sections["video"]);

    // Audio captions: untagged body is a single S0 speaker.
    const auto audio_chunks = detail::split_tagged(sections["audio"]);
    std::map<SpeakerTag, std::vector<int>> captions;
    bool untagged_audio = false;
    if (audio_chunks.empty()) {
        captions[SpeakerTag::S0] = {};
        untagged_audio = true;
    } else if (!audio_chunks.front().tag.has_value()) {
        require(audio_chunks.size() == 1, Errc::TagMismatch,
                "audio line mixes untagged and tagged descriptions");
        captions[SpeakerTag::S0] = vocab.tokenize(audio_chunks.front().text);
        untagged_audio = true;
    } else {
        for (const auto& c : audio_chunks) {
            require(!captions.count(*c.tag), Errc::TagMismatch,
                    std::string("duplicate audio tag [") + speaker_tag_name(*c.tag) + "]");
            captions[*c.tag] = vocab.tokenize(c.text);
        }
        require(captions.count(SpeakerTag::S0) != 0, Errc::TagMismatch, "audio tags lack [S0]");
    }
    bundle.n_speakers = static_cast<int>(captions.size());
    bundle.audio_captions.push_back(captions[SpeakerTag::S0]);
    if (captions.count(SpeakerTag::S1)) bundle.audio_captions.push_back(captions[SpeakerTag::S1]);

    // Transcript segments. An untagged non-empty transcript is one S0 segment;
    // an empty transcript means no segments (sound-effect bundle).
    const auto text_chunks = detail::split_tagged(sections["text"]);
    for (const auto& c : text_chunks) {
        TranscriptSegment seg;
        seg.tag = c.tag.value_or(SpeakerTag::S0);
        require(c.tag.has_value() || text_chunks.size() == 1, Errc::TagMismatch,
                "text line mixes untagged and tagged segments");
        const bool known = (seg.tag == SpeakerTag::S0) ||
                           (seg.tag == SpeakerTag::S1 && captions.count(SpeakerTag::S1));
        require(known, Errc::TagMismatch,
                std::string("tag [") + speaker_tag_name(seg.tag) + "] has no matching audio entry");
        seg.phonemes = g2p(c.text);
        bundle.segments.push_back(std::move(seg));
    }
    (void)untagged_audio;

    validate_bundle(bundle);
    return bundle;
}

// Structural invariants shared by parsing, decode and tests. Bundles with no
// segments at all are the sound-effect case and are exempt from tag counting.
inline void validate_bundle(const InstructionBundle& b) {
    require(b.n_speakers == 1 || b.n_speakers == 2, Errc::TagMismatch, "n_speakers must be 1 or 2");
    require(b.audio_captions.size() == static_cast<std::size_t>(b.n_speakers), Errc::TagMismatch,
            "audio caption count must equal n_speakers");
    bool has_s0 = false, has_s1 = false;
    for (const auto& s : b.segments) {
        if (s.tag == SpeakerTag::S0) has_s0 = true;
        if (s.tag == SpeakerTag::S1) has_s1 = true;
        for (int id : s.phonemes.ids)
            require(id >= 0 && id < kPhonemeAlphabetSize, Errc::UnmappableCharacter,
                    "phoneme id outside alphabet");
    }
    require(!has_s1 || has_s0, Errc::TagMismatch, "S1 segment without any S0 segment");
    if (!b.segments.empty()) {
        const int distinct = (has_s0 ? 1 : 0) + (has_s1 ? 1 : 0);
        require(distinct == b.n_speakers, Errc::TagMismatch,
                "speaker tags in segments do not match n_speakers");
    }
    require(!has_s1 || b.n_speakers == 2, Errc::TagMismatch, "S1 segment in single-speaker bundle");
}

// ---------------------------------------------------------------------------
// bundle token encoding
// ---------------------------------------------------------------------------

// Encoded stream id space: caption ids [0, V), then SEP, [S0], [S1], then
// phoneme ids mapped to V + 3 + id.
struct BundleTokens {
    static int sep(const Vocab& v) { return v.size(); }
    static int tag_s0(const Vocab& v) { return v.size() + 1; }
    static int tag_s1(const Vocab& v) { return v.size() + 2; }
    static int phoneme(const Vocab& v, int id) { return v.size() + 3 + id; }
};

// Serializes a bundle to one conditioning token sequence:
// [video tokens] SEP [audio tokens] SEP [tag-prefixed phoneme tokens].
// Two-speaker audio captions are themselves tag-prefixed so the stream
// round-trips.
inline std::vector<int> encode_bundle(const InstructionBundle& bundle, const Vocab& vocab) {
    validate_bundle(bundle);
    const int v = vocab.size();
    auto check_caption = [&](const std::vector<int>& toks) {
        for (int t : toks)
            require(t >= 0 && t < v, Errc::VocabMiss, "caption token id outside vocabulary");
    };
    std::vector<int> out;
    check_caption(bundle.video_caption);
    out.insert(out.end(), bundle.video_caption.begin(), bundle.video_caption.end());
    out.push_back(BundleTokens::sep(vocab));
    if (bundle.n_speakers == 1) {
        check_caption(bundle.audio_captions[0]);
        out.insert(out.end(), bundle.audio_captions[0].begin(), bundle.audio_captions[0].end());
    } else {
        out.push_back(BundleTokens::tag_s0(vocab));
        check_caption(bundle.audio_captions[0]);
        out.insert(out.end(), bundle.audio_captions[0].begin(), bundle.audio_captions[0].end());
        out.push_back(BundleTokens::tag_s1(vocab));
        check_caption(bundle.audio_captions[1]);
        out.insert(out.end(), bundle.audio_captions[1].begin(), bundle.audio_captions[1].end());
    }
    out.push_back(BundleTokens::sep(vocab));
    for (const auto& seg : bundle.segments) {
        out.push_back(seg.tag == SpeakerTag::S0 ? BundleTokens::tag_s0(vocab)
                                                : BundleTokens::tag_s1(vocab));
        for (int id : seg.phonemes.ids) out.push_back(BundleTokens::phoneme(vocab, id));
    }
    return out;
}

// Inverse of encode_bundle.
inline InstructionBundle decode_bundle(const std::vector<int>& tokens, const Vocab& vocab) {
    const int sep = BundleTokens::sep(vocab);
    const int s0 = BundleTokens::tag_s0(vocab);
    const int s1 = BundleTokens::tag_s1(vocab);
    std::vector<std::vector<int>> sections(1);
    for (int t : tokens) {
        if (t == sep && sections.size() < 3) sections.emplace_back();
        else sections.back().push_back(t);
    }
    require(sections.size() == 3, Errc::VocabMiss, "token stream lacks two separators");

    InstructionBundle b;
    b.video_caption = sections[0];
    const auto& audio = sections[1];
    if (!audio.empty() && audio.front() == s0) {
        b.n_speakers = 2;
        b.audio_captions.assign(2, {});
        int cur = 0;
        for (std::size_t i = 1; i < audio.size(); ++i) {
            if (audio[i] == s1) cur = 1;
            else b.audio_captions[static_cast<std::size_t>(cur)].push_back(audio[i]);
        }
    } else {
        b.n_speakers = 1;
        b.audio_captions = {audio};
    }
    for (int t : sections[2]) {
        if (t == s0 || t == s1) {
            TranscriptSegment seg;
            seg.tag = (t == s0) ? SpeakerTag::S0 : SpeakerTag::S1;
            b.segments.push_back(seg);
        } else {
            require(!b.segments.empty(), Errc::VocabMiss, "phoneme token before any speaker tag");
            b.segments.back().phonemes.ids.push_back(t - BundleTokens::phoneme(vocab, 0));
        }
    }
    validate_bundle(b);
    return b;
}

inline bool bundles_equal(const InstructionBundle& a, const InstructionBundle& b) {
    if (a.video_caption != b.video_caption || a.n_speakers != b.n_speakers) return false;
    if (a.audio_captions != b.audio_captions || a.segments.size() != b.segments.size()) return false;
    for (std::size_t i = 0; i < a.segments.size(); ++i) {
        if (a.segments[i].tag != b.segments[i].tag) return false;
        if (a.segments[i].phonemes.ids != b.segments[i].phonemes.ids) return false;
    }
    return true;
}

}  // namespace sonate
