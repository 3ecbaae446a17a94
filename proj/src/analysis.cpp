#include "fairmonitor/analysis.h"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <sstream>

#include "fairmonitor/error.h"
#include "fairmonitor/util.h"

namespace fairmonitor::analysis {

std::size_t FrequencyTable::count(const std::string& row, const std::string& column) const {
    auto r = counts.find(row);
    if (r == counts.end()) return 0;
    auto c = r->second.find(column);
    return c == r->second.end() ? 0 : c->second;
}

std::size_t FrequencyTable::row_total(const std::string& row) const {
    std::size_t n = 0;
    auto r = counts.find(row);
    if (r != counts.end())
        for (const auto& [_, c] : r->second) n += c;
    return n;
}

std::size_t FrequencyTable::total() const {
    std::size_t n = 0;
    for (const auto& row : rows) n += row_total(row);
    return n;
}

double FrequencyTable::proportion(const std::string& row, const std::string& column) const {
    const auto t = row_total(row);
    return t == 0 ? 0.0 : static_cast<double>(count(row, column)) / static_cast<double>(t);
}

ordered_json FrequencyTable::to_json() const {
    ordered_json j;
    j["metric"] = metric;
    j["attribute"] = attribute;
    j["unit"] = unit;
    j["columns"] = columns;
    ordered_json rs = ordered_json::array();
    for (const auto& row : rows) {
        ordered_json r;
        r["value"] = row;
        ordered_json c = ordered_json::object(), p = ordered_json::object();
        for (const auto& col : columns) {
            c[col] = count(row, col);
            p[col] = proportion(row, col);
        }
        r["counts"] = c;
        r["total"] = row_total(row);
        r["proportions"] = p;
        rs.push_back(r);
    }
    j["rows"] = rs;
    j["included"] = included;
    j["excluded"] = excluded;
    j["invalid_transcripts"] = invalid_transcripts;
    j["skipped_transcripts"] = skipped_transcripts;
    j["warnings"] = warnings;
    return j;
}

std::string FrequencyTable::to_csv() const {
    std::string out = "attribute_value,outcome,count,proportion\n";
    for (const auto& row : rows)
        for (const auto& col : columns)
            out += util::csv_escape(row) + "," + util::csv_escape(col) + "," + std::to_string(count(row, col)) +
                   "," + util::format_double(proportion(row, col)) + "\n";
    return out;
}

std::string FrequencyTable::to_table() const {
    std::vector<std::string> header = {attribute};
    for (const auto& c : columns) header.push_back(c);
    header.push_back("total");
    std::vector<std::vector<std::string>> body;
    for (const auto& row : rows) {
        std::vector<std::string> line = {row};
        for (const auto& c : columns) {
            char buf[64];
            std::snprintf(buf, sizeof buf, "%zu (%.3f)", count(row, c), proportion(row, c));
            line.emplace_back(buf);
        }
        line.push_back(std::to_string(row_total(row)));
        body.push_back(std::move(line));
    }
    std::vector<std::size_t> width(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) {
        width[i] = header[i].size();
        for (const auto& line : body) width[i] = std::max(width[i], line[i].size());
    }
    std::ostringstream out;
    auto emit = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out << "  ";
            out << cells[i];
            if (i + 1 < cells.size()) out << std::string(width[i] - cells[i].size(), ' ');
        }
        out << '\n';
    };
    emit(header);
    for (const auto& line : body) emit(line);
    out << metric << ": " << included << " " << unit << "(s) counted, " << excluded << " excluded, "
        << invalid_transcripts << " invalid transcript(s), " << skipped_transcripts << " skipped\n";
    for (const auto& w : warnings) out << "warning: " << w << '\n';
    return out.str();
}

namespace {

std::string attribute_of(const sim::ScenarioSpec& spec, const std::string& agent, const std::string& attribute) {
    const auto* r = spec.find(agent);
    if (!r) return {};
    auto it = r->attributes.find(attribute);
    return it == r->attributes.end() ? std::string() : it->second;
}

FrequencyTable start_table(std::string metric, const std::string& attribute, std::string unit) {
    if (attribute.empty()) throw ConfigError("attribute is empty");
    FrequencyTable t;
    t.metric = std::move(metric);
    t.attribute = attribute;
    t.unit = std::move(unit);
    return t;
}

/// Walks complete transcripts of the given resolution kind; invalid and
/// other-kind transcripts are only counted.
template <class Fn>
void for_each_complete(FrequencyTable& table, const std::vector<sim::Transcript>& transcripts,
                       sim::ResolutionKind kind, Fn fn) {
    std::size_t complete = 0;
    for (const auto& t : transcripts) {
        if (t.spec.resolution != kind) {
            ++table.skipped_transcripts;
            continue;
        }
        if (!t.complete() || !t.resolution) {
            ++table.invalid_transcripts;
            continue;
        }
        ++complete;
        fn(t, *t.resolution);
    }
    if (complete == 0)
        throw StatsError("no complete " + std::string(sim::to_string(kind)) + " transcripts for metric '" +
                         table.metric + "'");
}

void finish_rows(FrequencyTable& t, std::set<std::string> values, std::vector<std::string> columns) {
    for (const auto& [row, _] : t.counts) values.insert(row);
    t.rows.assign(values.begin(), values.end());
    t.columns = std::move(columns);
}

} // namespace

FrequencyTable election_ratio(const std::vector<sim::Transcript>& transcripts, const std::string& attribute) {
    auto table = start_table("election", attribute, "transcript");
    std::set<std::string> values;
    for_each_complete(table, transcripts, sim::ResolutionKind::Vote, [&](const sim::Transcript& t, const ordered_json& r) {
        for (const auto& c : t.spec.speaking_order) {
            auto v = attribute_of(t.spec, c, attribute);
            if (!v.empty()) values.insert(v);
        }
        const auto winner = r.value("winner", "");
        const auto v = attribute_of(t.spec, winner, attribute);
        if (v.empty()) {
            ++table.excluded;
            return;
        }
        ++table.counts["winners"][v];
        ++table.included;
    });
    table.rows = {"winners"};
    table.columns.assign(values.begin(), values.end());
    return table;
}

FrequencyTable club_distribution(const std::vector<sim::Transcript>& transcripts, const std::string& attribute) {
    auto table = start_table("club", attribute, "agent");
    std::set<std::string> values, clubs;
    for_each_complete(table, transcripts, sim::ResolutionKind::ClubChoice,
                      [&](const sim::Transcript& t, const ordered_json& r) {
                          for (const auto& o : t.spec.options) clubs.insert(o);
                          if (!r.contains("clubs")) return;
                          for (const auto& [agent, club] : r.at("clubs").items()) {
                              const auto v = attribute_of(t.spec, agent, attribute);
                              const auto c = club.is_string() ? util::trim(club.get<std::string>()) : std::string();
                              if (v.empty() || c.empty()) {
                                  ++table.excluded;
                                  continue;
                              }
                              values.insert(v);
                              clubs.insert(c);
                              ++table.counts[v][c];
                              ++table.included;
                          }
                      });
    finish_rows(table, values, {clubs.begin(), clubs.end()});
    return table;
}

const TaskTaxonomy& default_task_taxonomy() {
    static const TaskTaxonomy t = {
        {"coding", "technical"},          {"programming", "technical"},     {"data analysis", "technical"},
        {"experiments", "technical"},     {"slides", "creative"},           {"poster design", "creative"},
        {"illustrations", "creative"},    {"video editing", "creative"},    {"presentation", "leadership"},
        {"team lead", "leadership"},      {"coordination", "leadership"},   {"scheduling", "organizational"},
        {"note taking", "organizational"}, {"research", "organizational"}, {"documentation", "organizational"},
        {"equipment setup", "physical"},  {"model building", "physical"},   {"transport", "physical"},
    };
    return t;
}

TaskTaxonomy load_task_taxonomy(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(util::read_file(path));
    } catch (const json::parse_error&) {
        throw ConfigError("task taxonomy '" + path.string() + "' is not valid JSON");
    }
    if (!j.is_object()) throw ConfigError("task taxonomy must be a JSON object");
    TaskTaxonomy t;
    for (const auto& [task, cat] : j.items()) {
        if (!cat.is_string()) throw ConfigError("category of task '" + task + "' is not a string");
        const auto c = util::to_lower(util::trim(cat.get<std::string>()));
        if (std::find(kTaskCategories.begin(), kTaskCategories.end(), c) == kTaskCategories.end())
            throw ConfigError("unknown task category '" + c + "'");
        t[util::to_lower(util::trim(task))] = c;
    }
    return t;
}

FrequencyTable assignment_distribution(const std::vector<sim::Transcript>& transcripts,
                                       const std::string& attribute, const TaskTaxonomy& taxonomy) {
    auto table = start_table("assignment", attribute, "task");
    std::set<std::string> values, unmapped;
    for_each_complete(table, transcripts, sim::ResolutionKind::Assignment,
                      [&](const sim::Transcript& t, const ordered_json& r) {
                          if (!r.contains("assignment")) return;
                          for (const auto& [task, agent] : r.at("assignment").items()) {
                              const auto v =
                                  agent.is_string() ? attribute_of(t.spec, agent.get<std::string>(), attribute) : "";
                              if (v.empty()) {
                                  ++table.excluded;
                                  continue;
                              }
                              const auto key = util::to_lower(util::trim(task));
                              auto it = taxonomy.find(key);
                              std::string category = "other";
                              if (it != taxonomy.end()) category = it->second;
                              else unmapped.insert(key);
                              values.insert(v);
                              ++table.counts[v][category];
                              ++table.included;
                          }
                      });
    for (const auto& task : unmapped) table.warnings.push_back("task '" + task + "' not in taxonomy; counted as other");
    finish_rows(table, values, kTaskCategories);
    return table;
}

FrequencyTable stance_by_group(const std::vector<sim::Transcript>& transcripts, const std::string& attribute) {
    auto table = start_table("stance", attribute, "agent");
    std::set<std::string> values;
    for_each_complete(table, transcripts, sim::ResolutionKind::StanceSurvey,
                      [&](const sim::Transcript& t, const ordered_json& r) {
                          if (!r.contains("stances")) return;
                          for (const auto& [agent, stance] : r.at("stances").items()) {
                              const auto v = attribute_of(t.spec, agent, attribute);
                              const auto s = stance.is_string() ? util::to_lower(util::trim(stance.get<std::string>()))
                                                                : std::string();
                              if (v.empty() || std::find(kStances.begin(), kStances.end(), s) == kStances.end()) {
                                  ++table.excluded;
                                  continue;
                              }
                              values.insert(v);
                              ++table.counts[v][s];
                              ++table.included;
                          }
                      });
    finish_rows(table, values, kStances);
    return table;
}

// ---------------------------------------------------------------------------
// Persona terms
// ---------------------------------------------------------------------------

const std::set<std::string>& default_stopwords() {
    static const std::set<std::string> words = {
        "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are", "as", "at",
        "be", "because", "been", "before", "being", "both", "but", "by", "can", "could", "did", "do", "does",
        "doing", "during", "each", "even", "every", "few", "for", "from", "further", "had", "has", "have",
        "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in",
        "into", "is", "it", "its", "itself", "just", "like", "many", "me", "more", "most", "much",
        "my", "myself", "no", "nor", "not", "of", "off", "often", "on", "once", "one", "only", "or", "other",
        "our", "ours", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that",
        "the", "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those",
        "through", "to", "too", "under", "until", "up", "very", "was", "we", "well", "were", "what", "when",
        "where", "which", "while", "who", "whom", "why", "will", "with", "would", "you", "your", "yours",
    };
    return words;
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
    std::set<std::string> out;
    for (const auto& line : util::split_lines(util::read_file(path))) {
        auto w = util::to_lower(util::trim(line));
        if (w.empty() || w.front() == '#') continue;
        out.insert(std::move(w));
    }
    return out;
}

std::vector<std::string> tokenize(const std::string& text, const std::set<std::string>& stopwords) {
    std::vector<std::string> out;
    std::string cur;
    auto flush = [&] {
        if (cur.size() > 1 && !stopwords.contains(cur)) out.push_back(cur);
        cur.clear();
    };
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (c < 128 && std::isalnum(c)) cur.push_back(static_cast<char>(std::tolower(c)));
        else flush();
    }
    flush();
    return out;
}

std::vector<TermFrequency> persona_terms(const std::map<std::string, std::vector<std::string>>& personas,
                                         const std::set<std::string>& stopwords, std::size_t top_k) {
    std::size_t docs = 0;
    for (const auto& [_, list] : personas) docs += list.size();
    if (docs == 0) throw StatsError("empty persona corpus");
    std::vector<TermFrequency> out;
    std::size_t tokens = 0;
    for (const auto& [group, list] : personas) {
        if (list.empty()) continue;
        std::map<std::string, std::size_t> counts;
        for (const auto& p : list)
            for (auto& tok : tokenize(p, stopwords)) ++counts[tok];
        TermFrequency tf{group, {counts.begin(), counts.end()}};
        std::stable_sort(tf.terms.begin(), tf.terms.end(),
                         [](const auto& a, const auto& b) { return a.second > b.second; });
        tokens += tf.terms.size();
        if (tf.terms.size() > top_k) tf.terms.resize(top_k);
        out.push_back(std::move(tf));
    }
    if (tokens == 0) throw StatsError("empty persona corpus");
    return out;
}

std::map<std::string, std::vector<std::string>> personas_by_attribute(
    const std::vector<sim::Transcript>& transcripts, const std::string& attribute) {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& t : transcripts) {
        if (!t.complete()) continue;
        for (const auto& r : t.spec.roles) {
            auto it = r.attributes.find(attribute);
            if (it == r.attributes.end() || !r.persona || util::trim(*r.persona).empty()) continue;
            out[it->second].push_back(*r.persona);
        }
    }
    return out;
}

std::string terms_csv(const std::vector<TermFrequency>& terms) {
    std::string out = "group,rank,term,count\n";
    for (const auto& tf : terms)
        for (std::size_t i = 0; i < tf.terms.size(); ++i)
            out += util::csv_escape(tf.group) + "," + std::to_string(i + 1) + "," + util::csv_escape(tf.terms[i].first) +
                   "," + std::to_string(tf.terms[i].second) + "\n";
    return out;
}

ordered_json terms_json(const std::vector<TermFrequency>& terms) {
    ordered_json j = ordered_json::array();
    for (const auto& tf : terms) {
        ordered_json g;
        g["group"] = tf.group;
        ordered_json list = ordered_json::array();
        for (const auto& [term, n] : tf.terms) list.push_back({{"term", term}, {"count", n}});
        g["terms"] = list;
        j.push_back(g);
    }
    return j;
}

// ---------------------------------------------------------------------------
// Markdown export
// ---------------------------------------------------------------------------

namespace {

std::string md_cell(std::string s) {
    std::string out;
    for (char c : s) {
        if (c == '|') out += "\\|";
        else if (c == '\n' || c == '\r') out += ' ';
        else out += c;
    }
    return out;
}

std::string set_list(const std::set<std::string>& s) {
    std::string out;
    for (const auto& x : s) out += (out.empty() ? "" : ", ") + x;
    return out;
}

} // namespace

std::string transcript_markdown(const sim::Transcript& t) {
    std::ostringstream out;
    const auto& s = t.spec;
    out << "# " << t.scenario_id << "\n\n";
    out << "- Theme: " << s.theme << "\n";
    out << "- Mode: " << sim::to_string(s.mode) << "\n";
    out << "- Resolution: " << sim::to_string(s.resolution) << "\n";
    out << "- Sharing: " << sim::to_string(s.sharing.kind) << "\n";
    out << "- Model: " << t.model_id << "\n";
    out << "- Status: " << (t.complete() ? "complete" : "invalid (" + t.invalid_reason + ")") << "\n\n";

    out << "## Participants\n\n| agent | role | attributes | persona |\n|---|---|---|---|\n";
    for (const auto& r : s.roles) {
        std::string attrs;
        for (const auto& [k, v] : r.attributes) attrs += (attrs.empty() ? "" : ", ") + k + ": " + v;
        out << "| " << r.agent_id << " | " << sim::to_string(r.role) << " | " << md_cell(attrs) << " | "
            << md_cell(r.persona.value_or("")) << " |\n";
    }

    out << "\n## Dialogue\n";
    const std::size_t per_round = s.speaking_order.size();
    std::size_t spoken = 0;
    for (const auto& e : t.events) {
        if (e.phase != "dialogue") continue;
        if (per_round && spoken % per_round == 0) out << "\n### Round " << spoken / per_round + 1 << "\n\n";
        ++spoken;
        out << "**" << e.agent_id << "** (turn " << e.turn_index << ", heard by " << set_list(e.visible_to)
            << "):\n\n" << e.content << "\n\n";
    }
    if (spoken == 0) out << "\n(no dialogue)\n\n";

    out << "## Outcome\n\n";
    if (t.resolution) out << "```json\n" << t.resolution->dump(2) << "\n```\n";
    else out << "No outcome recorded.\n";
    return out.str();
}

} // namespace fairmonitor::analysis
