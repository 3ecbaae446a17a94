#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "fairmonitor/core.h"
#include "fairmonitor/templates.h"

namespace fairmonitor {

class Gateway;
class Store;

namespace sim {

enum class Mode { Cooperation, Competition, Discussion };
enum class ResolutionKind { Vote, Assignment, StanceSurvey, ClubChoice };
enum class TopologyKind { OneToOne, OneToMany, ManyToMany };
enum class AgentRole { Student, Teacher, Voter, Moderator };

std::string_view to_string(Mode m);
std::string_view to_string(ResolutionKind k);
std::string_view to_string(TopologyKind k);
std::string_view to_string(AgentRole r);
std::optional<Mode> parse_mode(std::string_view s);
std::optional<ResolutionKind> parse_resolution(std::string_view s);
std::optional<TopologyKind> parse_topology(std::string_view s);
std::optional<AgentRole> parse_role(std::string_view s);

inline constexpr const char* kManager = "manager";

struct RoleSpec {
    std::string agent_id;
    AgentRole role = AgentRole::Student;
    std::map<std::string, std::string> attributes;
    std::optional<std::string> persona;

    bool operator==(const RoleSpec&) const = default;
};

struct SharingTopology {
    TopologyKind kind = TopologyKind::ManyToMany;
    /// speaker -> audience; unused for ManyToMany (broadcast).
    std::map<std::string, std::set<std::string>> edges;

    /// Who hears `speaker`, excluding the speaker.
    std::set<std::string> audience(const std::string& speaker, const std::vector<RoleSpec>& roles) const;

    bool operator==(const SharingTopology&) const = default;
};

/// Ring in speaking order for OneToOne; the first speaker as a hub for
/// OneToMany; broadcast for ManyToMany.
SharingTopology make_topology(TopologyKind kind, const std::vector<std::string>& speaking_order);

struct ScenarioSpec {
    std::string scenario_id;
    Mode mode = Mode::Discussion;
    std::string theme;
    std::vector<RoleSpec> roles;
    int rounds = 3;
    SharingTopology sharing;
    ResolutionKind resolution = ResolutionKind::StanceSurvey;
    std::uint64_t seed = 0;
    std::vector<std::string> speaking_order;
    /// Tasks for Assignment, clubs for ClubChoice.
    std::vector<std::string> options;

    /// Throws ConfigError on the first broken invariant.
    void validate() const;
    const RoleSpec* find(const std::string& agent_id) const;
    std::vector<std::string> voters() const;

    bool operator==(const ScenarioSpec&) const = default;
};

ordered_json to_json(const ScenarioSpec& s);
ScenarioSpec scenario_spec_from_json(const json& j);

struct Event {
    int turn_index = 0;
    std::string agent_id;
    std::set<std::string> visible_to;
    std::string content;
    std::string phase;  // briefing | dialogue

    bool operator==(const Event&) const = default;
};

/// A prompt issued during a scenario, kept for visibility audits.
struct PromptRecord {
    std::string agent_id;
    std::string phase;
    /// turn_index of the newest event when the prompt was issued.
    int after_turn = 0;
    std::string text;

    bool operator==(const PromptRecord&) const = default;
};

enum class TranscriptStatus { Complete, Invalid };

struct Transcript {
    std::string scenario_id;
    std::string model_id;
    ScenarioSpec spec;
    std::vector<Event> events;
    /// Present iff status is Complete.
    std::optional<ordered_json> resolution;
    TranscriptStatus status = TranscriptStatus::Complete;
    std::string invalid_reason;
    std::vector<PromptRecord> prompts;

    bool complete() const { return status == TranscriptStatus::Complete; }
};

ordered_json to_json(const Transcript& t);
Transcript transcript_from_json(const json& j);

// ---------------------------------------------------------------------------
// Batch construction
// ---------------------------------------------------------------------------

struct ThemeInfo {
    std::string key;
    std::string text;
    ResolutionKind resolution;
    Mode default_mode;
    AgentRole role;
    std::vector<std::string> options;
};

/// Known themes: election, group_project, technology, club.
const ThemeInfo& theme_info(const std::string& key);
std::vector<std::string> theme_keys();

struct AttributePlan {
    std::string attribute;
    std::vector<std::string> values;
};

/// Default contrast for gender, race and age.
AttributePlan default_plan(const std::string& attribute);

struct BatchOptions {
    std::uint64_t seed = 0;
    int rounds = 3;
    TopologyKind topology = TopologyKind::ManyToMany;
    int participants = 4;  // non-competition themes
    int voters = 3;
};

/// n scenarios with fresh seeds. The agent carrying each contrast value
/// speaks first in a rotating pattern, so first-speaker counts per value
/// differ by at most one.
std::vector<ScenarioSpec> build_batch(const std::string& theme, Mode mode, int n, const AttributePlan& plan,
                                      const BatchOptions& options = {});

/// Value of `attribute` carried by the first speaker.
std::string first_speaker_value(const ScenarioSpec& spec, const std::string& attribute);

// ---------------------------------------------------------------------------
// Execution
// ---------------------------------------------------------------------------

struct SimSettings {
    std::string model_id = "mock-agent";
    SamplingParams params = SamplingParams::agent();
    const PromptLibrary* prompts = &PromptLibrary::builtin();
    bool record_prompts = false;
};

/// Asks the model under test for a persona. Throws ConfigError on an empty
/// attribute set and ParseError when the reply is empty twice.
std::string generate_persona(const RoleSpec& role, Gateway& gateway, const SimSettings& settings,
                             std::uint64_t seed);

/// Parses the single `RESULT: <json>` line of a reply. Throws ParseError.
json parse_result_line(const std::string& reply);

/// Runs the scenario phases: personas, briefings, rounds, resolution.
/// Failures produce an Invalid transcript instead of throwing.
Transcript run_scenario(const ScenarioSpec& spec, Gateway& gateway, const SimSettings& settings = {});

struct BatchSummary {
    std::size_t complete = 0;
    std::size_t invalid = 0;
    std::size_t skipped = 0;

    ordered_json to_json() const;
};

/// Runs every spec lacking a complete transcript in the run, up to
/// `parallelism` scenarios at once; each transcript is persisted as it
/// finishes.
BatchSummary run_batch(const std::vector<ScenarioSpec>& specs, Gateway& gateway, Store& store,
                       const std::string& run_id, const json& config, const SimSettings& settings = {},
                       std::size_t parallelism = 4);

/// Every transcript of a run, sorted by scenario_id.
std::vector<Transcript> load_transcripts(const Store& store, const std::string& run_id);

/// Events agent `agent_id` may see, oldest first.
std::vector<const Event*> visible_events(const Transcript& t, const std::string& agent_id);

struct Leak {
    std::string scenario_id;
    int turn_index = 0;
    std::string agent_id;
};

/// Every prompt issued to an agent outside an event's audience after the
/// event, that contains the event's text.
std::vector<Leak> visibility_leaks(const Transcript& t);

} // namespace sim
} // namespace fairmonitor
