#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "listsynth/common.hpp"
#include "listsynth/dsl.hpp"
#include "listsynth/solutions.hpp"

namespace listsynth {

using json = nlohmann::ordered_json;

struct DatasetRecord {
    Program program;
    std::string text;  // canonical program text
    std::vector<Example> examples;
};

struct AggregatorInstance {
    Program global;
    std::string global_text;
    std::vector<Example> examples;
    std::vector<PESolution> pe;  // found solutions only
};

inline json value_to_json(const Value& v) {
    if (v.kind == ValueKind::Int) return json(v.as_int());
    json arr = json::array();
    for (int16_t x : v.items()) arr.push_back(static_cast<int>(x));
    return arr;
}

inline Value value_from_json(const json& j) {
    if (j.is_number_integer()) {
        int v = j.get<int>();
        if (v < kIntMin || v > kIntMax) throw ConfigError("integer out of DSL range");
        return Value::from_int(v);
    }
    if (j.is_array()) {
        if (j.size() > kMaxListLen) throw ConfigError("list longer than the DSL bound");
        std::vector<int> xs;
        for (const auto& e : j) {
            int v = e.get<int>();
            if (v < kIntMin || v > kIntMax) throw ConfigError("list entry out of DSL range");
            xs.push_back(v);
        }
        return Value::from_list(xs);
    }
    throw ConfigError("value must be an integer or an integer array");
}

inline json example_to_json(const Example& ex) {
    json j;
    j["inputs"] = json::array();
    for (const Value& v : ex.inputs) j["inputs"].push_back(value_to_json(v));
    j["output"] = value_to_json(ex.output);
    return j;
}

inline Example example_from_json(const json& j) {
    Example ex;
    for (const auto& v : j.at("inputs")) ex.inputs.push_back(value_from_json(v));
    ex.output = value_from_json(j.at("output"));
    return ex;
}

inline json record_to_json(const DatasetRecord& r) {
    json j;
    j["program"] = r.text;
    j["examples"] = json::array();
    for (const Example& ex : r.examples) j["examples"].push_back(example_to_json(ex));
    return j;
}

inline DatasetRecord record_from_json(const json& j) {
    DatasetRecord r;
    r.text = j.at("program").get<std::string>();
    r.program = parse_program(r.text);
    for (const auto& ex : j.at("examples")) r.examples.push_back(example_from_json(ex));
    return r;
}

inline json instance_to_json(const AggregatorInstance& inst) {
    json j;
    j["program"] = inst.global_text;
    j["examples"] = json::array();
    for (const Example& ex : inst.examples) j["examples"].push_back(example_to_json(ex));
    j["pe"] = json::array();
    for (const PESolution& sol : inst.pe) {
        json p;
        p["program"] = format_program(sol.program);
        p["u"] = sol.u;
        p["satisfied"] = sol.satisfied;
        j["pe"].push_back(p);
    }
    return j;
}

inline AggregatorInstance instance_from_json(const json& j) {
    AggregatorInstance inst;
    inst.global_text = j.at("program").get<std::string>();
    inst.global = parse_program(inst.global_text);
    for (const auto& ex : j.at("examples")) inst.examples.push_back(example_from_json(ex));
    for (const auto& p : j.at("pe")) {
        PESolution sol;
        sol.found = true;
        sol.program = parse_program(p.at("program").get<std::string>());
        sol.u = p.at("u").get<double>();
        sol.satisfied = p.at("satisfied").get<std::vector<int>>();
        inst.pe.push_back(std::move(sol));
    }
    return inst;
}

// JSONL files start with one header line ({"header":true, ...config echo});
// every following line is one record.
template <class Range, class ToJson>
void write_jsonl(const std::string& path, const json& header, const Range& items, ToJson to_json) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open " + path + " for writing");
    json h = header;
    h["header"] = true;
    os << h.dump() << "\n";
    for (const auto& item : items) os << to_json(item).dump() << "\n";
    if (!os) throw ConfigError("short write to " + path);
}

struct JsonlFile {
    json header;
    std::vector<json> lines;
};

inline JsonlFile read_jsonl(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open " + path);
    JsonlFile out;
    std::string line;
    bool first = true;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        if (first && j.is_object() && j.value("header", false)) {
            out.header = j;
            first = false;
            continue;
        }
        first = false;
        out.lines.push_back(std::move(j));
    }
    return out;
}

inline std::vector<DatasetRecord> read_dataset(const std::string& path, json* header = nullptr) {
    JsonlFile file = read_jsonl(path);
    if (header != nullptr) *header = file.header;
    std::vector<DatasetRecord> out;
    for (const json& j : file.lines) out.push_back(record_from_json(j));
    return out;
}

inline std::vector<AggregatorInstance> read_instances(const std::string& path,
                                                      json* header = nullptr) {
    JsonlFile file = read_jsonl(path);
    if (header != nullptr) *header = file.header;
    std::vector<AggregatorInstance> out;
    for (const json& j : file.lines) out.push_back(instance_from_json(j));
    return out;
}

}  // namespace listsynth
