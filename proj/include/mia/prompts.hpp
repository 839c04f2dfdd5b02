#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mia {

enum class TemplateId {
    sum_c,
    sum_g,
    filter_chunks,
    filter_nodes,
    gen_narrativeqa,
    gen_detective,
    gen_infbench,
    gen_nocha,
    extract_entities,
};

using Bindings = std::map<std::string, std::string, std::less<>>;

std::string_view template_name(TemplateId id);
std::optional<TemplateId> parse_template_id(std::string_view name);
const std::vector<TemplateId>& all_templates();

// Raw template text. Placeholders are written {name} with name in [a-z_0-9];
// literal braces elsewhere (the JSON answer format) are left alone.
const std::string& template_body(TemplateId id);

// Placeholder names in order of first appearance.
std::vector<std::string> template_placeholders(TemplateId id);

// Single-pass substitution. Throws missing_binding naming the first absent
// placeholder. Extra bindings are ignored.
std::string render_prompt(TemplateId id, const Bindings& bindings);

}  // namespace mia
