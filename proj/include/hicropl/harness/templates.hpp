// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <fstream>
#include <istream>
#include <string>
#include <vector>

#include "hicropl/numcore/errors.hpp"

namespace hicropl {

// Caption templates, "{}" marks the class name. Mirrors data/templates.txt.
inline const std::vector<std::string>& default_templates() {
  static const std::vector<std::string> templates{
      "a photo of a {}",    "a picture of the {}", "an image of a {}", "a drawing of a {}",
      "a bright {} icon",   "a simple {} sketch",  "this is a {}",     "a small {} shape",
  };
  return templates;
}

// One template per line; blank lines and '#' comments are skipped.
inline std::vector<std::string> parse_templates(std::istream& in) {
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (line.find("{}") == std::string::npos) throw TemplateError("template '" + line + "' has no {} slot");
    out.push_back(line);
  }
  if (out.empty()) throw TemplateError("template file has no templates");
  return out;
}

inline std::vector<std::string> load_templates(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open template file " + path);
  return parse_templates(in);
}

}  // namespace hicropl
