#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>

namespace idtrace::prompts {

struct PromptError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct PromptTemplate {
  std::string name;
  std::string text;

  // Replaces {key} for every key present in vars; unknown braces are left
  // untouched (templates legitimately contain JSON braces and {c1}-style
  // placeholders meant for the model).
  std::string render(const std::map<std::string, std::string>& vars) const;
};

class PromptLibrary {
 public:
  // Loads every *.txt in dir; the template name is the file stem.
  static PromptLibrary load_dir(const std::filesystem::path& dir);

  bool has(const std::string& name) const { return templates_.count(name) > 0; }
  const PromptTemplate& get(const std::string& name) const;
  void put(PromptTemplate tmpl) { templates_[tmpl.name] = std::move(tmpl); }
  size_t size() const { return templates_.size(); }

 private:
  std::map<std::string, PromptTemplate> templates_;
};

// Resolution order: explicit argument > IDTRACE_DATA_DIR > compiled-in
// default (the repository's data/ directory).
std::filesystem::path default_data_dir();

}  // namespace idtrace::prompts
