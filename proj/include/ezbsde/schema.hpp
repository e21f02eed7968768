#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace ezbsde {

/// Validator for the draft-07 subset used by the shipped schemas: type, const, enum,
/// required, properties, additionalProperties, items, minItems, maxItems,
/// uniqueItems, minimum, maximum, exclusiveMinimum, exclusiveMaximum, oneOf.
/// Returns one message per violation, each prefixed with a JSON pointer.
class SchemaValidator {
public:
    explicit SchemaValidator(nlohmann::json schema) : schema_(std::move(schema)) {}

    std::vector<std::string> validate(const nlohmann::json& doc) const {
        std::vector<std::string> errors;
        check(schema_, doc, "", errors);
        return errors;
    }

    bool accepts(const nlohmann::json& doc) const { return validate(doc).empty(); }

private:
    nlohmann::json schema_;

    static bool has_type(const nlohmann::json& v, const std::string& t) {
        if (t == "object") return v.is_object();
        if (t == "array") return v.is_array();
        if (t == "string") return v.is_string();
        if (t == "boolean") return v.is_boolean();
        if (t == "null") return v.is_null();
        if (t == "number") return v.is_number();
        if (t == "integer") {
            if (v.is_number_integer()) return true;
            return v.is_number_float() && std::floor(v.get<double>()) == v.get<double>();
        }
        return false;
    }

    static void check(const nlohmann::json& s, const nlohmann::json& v, const std::string& at,
                      std::vector<std::string>& errors) {
        const std::string where = at.empty() ? "/" : at;
        if (s.contains("type")) {
            bool ok = false;
            if (s["type"].is_array()) {
                for (const auto& t : s["type"]) ok = ok || has_type(v, t.get<std::string>());
            } else {
                ok = has_type(v, s["type"].get<std::string>());
            }
            if (!ok) {
                errors.push_back(where + ": expected type " + s["type"].dump());
                return;
            }
        }
        if (s.contains("const") && v != s["const"])
            errors.push_back(where + ": must equal " + s["const"].dump());
        if (s.contains("enum")) {
            bool found = false;
            for (const auto& e : s["enum"]) found = found || e == v;
            if (!found) errors.push_back(where + ": not one of " + s["enum"].dump());
        }
        if (v.is_number()) {
            const double x = v.get<double>();
            if (s.contains("minimum") && x < s["minimum"].get<double>())
                errors.push_back(where + ": below minimum " + s["minimum"].dump());
            if (s.contains("maximum") && x > s["maximum"].get<double>())
                errors.push_back(where + ": above maximum " + s["maximum"].dump());
            if (s.contains("exclusiveMinimum") && !(x > s["exclusiveMinimum"].get<double>()))
                errors.push_back(where + ": must exceed " + s["exclusiveMinimum"].dump());
            if (s.contains("exclusiveMaximum") && !(x < s["exclusiveMaximum"].get<double>()))
                errors.push_back(where + ": must be below " + s["exclusiveMaximum"].dump());
        }
        if (v.is_object()) {
            if (s.contains("required"))
                for (const auto& r : s["required"])
                    if (!v.contains(r.get<std::string>()))
                        errors.push_back(where + ": missing required property '" + r.get<std::string>() + "'");
            const nlohmann::json props = s.value("properties", nlohmann::json::object());
            for (auto it = v.begin(); it != v.end(); ++it) {
                const std::string child = at + "/" + it.key();
                if (props.contains(it.key())) {
                    check(props[it.key()], it.value(), child, errors);
                } else if (s.contains("additionalProperties")) {
                    const auto& ap = s["additionalProperties"];
                    if (ap.is_boolean() && !ap.get<bool>())
                        errors.push_back(where + ": unexpected property '" + it.key() + "'");
                    else if (ap.is_object())
                        check(ap, it.value(), child, errors);
                }
            }
        }
        if (v.is_array()) {
            if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>())
                errors.push_back(where + ": fewer than " + s["minItems"].dump() + " items");
            if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>())
                errors.push_back(where + ": more than " + s["maxItems"].dump() + " items");
            if (s.value("uniqueItems", false)) {
                std::set<std::string> seen;
                for (const auto& e : v)
                    if (!seen.insert(e.dump()).second) errors.push_back(where + ": duplicate item " + e.dump());
            }
            if (s.contains("items"))
                for (std::size_t i = 0; i < v.size(); ++i)
                    check(s["items"], v[i], at + "/" + std::to_string(i), errors);
        }
        if (s.contains("oneOf")) {
            int matches = 0;
            std::vector<std::string> best;
            for (const auto& alt : s["oneOf"]) {
                std::vector<std::string> sub;
                check(alt, v, at, sub);
                if (sub.empty()) ++matches;
                else if (best.empty() || sub.size() < best.size()) best = sub;
            }
            if (matches == 0) {
                errors.push_back(where + ": matches no alternative");
                errors.insert(errors.end(), best.begin(), best.end());
            } else if (matches > 1) {
                errors.push_back(where + ": matches more than one alternative");
            }
        }
    }
};

}  // namespace ezbsde
