#include "biodistill/mesh.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "biodistill/error.hpp"

namespace biodistill {

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = text.find(sep, start);
    parts.push_back(text.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return parts;
}

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// TreeNumber

TreeNumber TreeNumber::parse(std::string_view path) {
  path = trim(path);
  if (path.empty()) throw Error(ErrorKind::parse, "empty tree number");
  for (auto seg : split(path, '.')) {
    if (seg.empty()) throw Error(ErrorKind::parse, "empty segment in tree number '" + std::string(path) + "'");
    for (char c : seg) {
      if (c == ' ' || c == '\t' || c == ';') {
        throw Error(ErrorKind::parse, "invalid character in tree number '" + std::string(path) + "'");
      }
    }
  }
  return TreeNumber(std::string(path));
}

std::size_t TreeNumber::depth() const {
  return static_cast<std::size_t>(std::count(path_.begin(), path_.end(), '.')) + 1;
}

std::vector<std::string> TreeNumber::proper_prefixes() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < path_.size(); ++i) {
    if (path_[i] == '.') out.push_back(path_.substr(0, i));
  }
  return out;
}

bool TreeNumber::is_proper_prefix_of(const TreeNumber& other) const {
  return other.path_.size() > path_.size() && other.path_.compare(0, path_.size(), path_) == 0 &&
         other.path_[path_.size()] == '.';
}

// ---------------------------------------------------------------------------
// Enum helpers

const char* to_string(IcMode mode) { return mode == IcMode::corpus ? "corpus" : "structural"; }

IcMode parse_ic_mode(std::string_view text) {
  if (text == "corpus") return IcMode::corpus;
  if (text == "structural") return IcMode::structural;
  throw Error(ErrorKind::config, "unknown ic_mode '" + std::string(text) + "'");
}

MeshFormat parse_mesh_format(std::string_view text) {
  if (text == "mesh-xml" || text == "xml") return MeshFormat::mesh_xml;
  if (text == "tsv") return MeshFormat::tsv;
  throw Error(ErrorKind::config, "unknown mesh format '" + std::string(text) + "'");
}

MeshFormat mesh_format_for(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".xml" ? MeshFormat::mesh_xml : MeshFormat::tsv;
}

// ---------------------------------------------------------------------------
// MeshOntology

MeshOntology::MeshOntology(std::vector<MeshDescriptor> descriptors) : descriptors_(std::move(descriptors)) {
  const int n = static_cast<int>(descriptors_.size());
  by_id_.reserve(descriptors_.size());
  for (int i = 0; i < n; ++i) {
    const auto& d = descriptors_[i];
    if (d.id.empty()) throw Error(ErrorKind::parse, "descriptor with empty id");
    if (d.id == kRootId) throw Error(ErrorKind::conflict, "descriptor id collides with the virtual root");
    if (!by_id_.emplace(d.id, i).second) throw Error(ErrorKind::conflict, "duplicate descriptor id " + d.id);
    for (const auto& tn : d.tree_numbers) {
      auto [it, inserted] = by_tree_.emplace(tn.path(), i);
      if (!inserted && it->second != i) {
        throw Error(ErrorKind::conflict, "tree number " + tn.path() + " claimed by both " +
                                             descriptors_[it->second].id + " and " + d.id);
      }
    }
  }

  std::vector<std::vector<int>> direct(descriptors_.size());
  for (int i = 0; i < n; ++i) {
    for (const auto& tn : descriptors_[i].tree_numbers) {
      for (const auto& prefix : tn.proper_prefixes()) {
        if (auto it = by_tree_.find(prefix); it != by_tree_.end() && it->second != i) direct[i].push_back(it->second);
      }
    }
  }

  // Close over descriptors: a parent reached through one tree number brings
  // its ancestors from every other tree number it holds.
  ancestors_.resize(descriptors_.size());
  std::vector<int> seen(descriptors_.size(), -1);
  std::vector<int> stack;
  for (int i = 0; i < n; ++i) {
    auto& anc = ancestors_[i];
    seen[i] = i;
    stack.assign(direct[i].begin(), direct[i].end());
    while (!stack.empty()) {
      const int a = stack.back();
      stack.pop_back();
      if (seen[a] == i) continue;
      seen[a] = i;
      anc.push_back(a);
      stack.insert(stack.end(), direct[a].begin(), direct[a].end());
    }
    std::sort(anc.begin(), anc.end());
  }

  counts_.assign(descriptors_.size(), 1);
  mode_ = IcMode::structural;
  rebuild_frequencies();
}

MeshOntology MeshOntology::with_counts(const AnnotationCounts& counts) const {
  MeshOntology copy = *this;
  copy.mode_ = IcMode::corpus;
  std::fill(copy.counts_.begin(), copy.counts_.end(), 0);
  std::size_t unknown = 0;
  for (const auto& [id, count] : counts) {
    auto it = copy.by_id_.find(id);
    if (it == copy.by_id_.end()) {
      ++unknown;
      continue;
    }
    copy.counts_[it->second] = count;
  }
  if (unknown > 0) spdlog::warn("ignored annotation counts for {} unknown descriptor id(s)", unknown);
  copy.rebuild_frequencies();
  return copy;
}

void MeshOntology::rebuild_frequencies() {
  closure_freq_.assign(descriptors_.size(), 0);
  total_mass_ = 0;
  for (std::size_t i = 0; i < descriptors_.size(); ++i) {
    const auto c = counts_[i];
    closure_freq_[i] += c;
    for (int a : ancestors_[i]) closure_freq_[a] += c;
    if (!descriptors_[i].tree_numbers.empty()) total_mass_ += c;
  }
}

bool MeshOntology::contains(std::string_view id) const { return by_id_.count(std::string(id)) > 0; }

int MeshOntology::index_of(std::string_view id) const {
  if (id == kRootId) return kRoot;
  auto it = by_id_.find(std::string(id));
  if (it == by_id_.end()) throw Error(ErrorKind::not_found, "unknown descriptor " + std::string(id));
  return it->second;
}

int MeshOntology::require(std::string_view id) const { return index_of(id); }

const std::string& MeshOntology::id_at(int index) const {
  static const std::string root(kRootId);
  return index == kRoot ? root : descriptors_[index].id;
}

const MeshDescriptor& MeshOntology::descriptor(std::string_view id) const {
  int i = index_of(id);
  if (i == kRoot) throw Error(ErrorKind::not_found, "the virtual root has no descriptor record");
  return descriptors_[i];
}

std::uint64_t MeshOntology::annotation_count(std::string_view id) const {
  int i = index_of(id);
  return i == kRoot ? total_mass_ : counts_[i];
}

std::vector<std::string> MeshOntology::root_children() const {
  std::vector<std::string> out;
  for (const auto& d : descriptors_) {
    if (std::any_of(d.tree_numbers.begin(), d.tree_numbers.end(), [](const TreeNumber& t) { return t.depth() == 1; })) {
      out.push_back(d.id);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::optional<std::string> MeshOntology::descriptor_at(std::string_view tree_path) const {
  auto it = by_tree_.find(std::string(tree_path));
  if (it == by_tree_.end()) return std::nullopt;
  return descriptors_[it->second].id;
}

bool MeshOntology::has_tree_numbers(std::string_view id) const {
  int i = index_of(id);
  return i == kRoot || !descriptors_[i].tree_numbers.empty();
}

std::set<std::string> MeshOntology::ancestors(std::string_view id) const {
  int i = index_of(id);
  std::set<std::string> out;
  if (i == kRoot) return out;
  out.emplace(kRootId);
  for (int a : ancestors_[i]) out.insert(descriptors_[a].id);
  return out;
}

bool MeshOntology::subsumes(std::string_view ancestor, std::string_view id) const {
  int a = index_of(ancestor);
  int i = index_of(id);
  if (a == kRoot || a == i) return true;
  if (i == kRoot) return false;
  return std::binary_search(ancestors_[i].begin(), ancestors_[i].end(), a);
}

std::uint64_t MeshOntology::closure_frequency(std::string_view id) const {
  int i = index_of(id);
  return i == kRoot ? total_mass_ : closure_freq_[i];
}

double MeshOntology::ic_at(int index) const {
  if (index == kRoot) return 0.0;
  const auto freq = closure_freq_[index];
  if (freq == 0 || total_mass_ == 0) {
    throw Error(ErrorKind::undefined_ic, "descriptor " + descriptors_[index].id + " has zero closure frequency");
  }
  // The ratio of two exact integers is correctly rounded, so scaling every
  // count by a constant reproduces the same double.
  return -std::log(static_cast<double>(freq) / static_cast<double>(total_mass_));
}

double MeshOntology::information_content(std::string_view id) const { return ic_at(index_of(id)); }

std::string MeshOntology::lca(std::string_view x, std::string_view y) const {
  int ix = index_of(x);
  int iy = index_of(y);
  if (ix == kRoot || iy == kRoot) return std::string(kRootId);

  auto with_self = [&](int i) {
    std::vector<int> v = ancestors_[i];
    v.insert(std::lower_bound(v.begin(), v.end(), i), i);
    return v;
  };
  auto ax = with_self(ix);
  auto ay = with_self(iy);
  std::vector<int> common;
  std::set_intersection(ax.begin(), ax.end(), ay.begin(), ay.end(), std::back_inserter(common));

  int best = kRoot;
  double best_ic = 0.0;
  for (int c : common) {
    double ic = ic_at(c);
    if (best == kRoot || ic > best_ic || (ic == best_ic && descriptors_[c].id < descriptors_[best].id)) {
      best = c;
      best_ic = ic;
    }
  }
  return id_at(best);
}

double MeshOntology::lin_similarity(std::string_view x, std::string_view y) const {
  const double ic_x = information_content(x);
  const double ic_y = information_content(y);
  const double denom = ic_x + ic_y;
  if (denom <= 0.0) return 0.0;
  const double shared = information_content(lca(x, y));
  return 2.0 * shared / denom;
}

std::vector<std::string> MeshOntology::usable_terms(std::span<const std::string> terms, const char* side) const {
  std::vector<std::string> out;
  std::size_t dropped = 0;
  for (const auto& t : terms) {
    auto it = by_id_.find(t);
    if (it == by_id_.end() || descriptors_[it->second].tree_numbers.empty()) {
      ++dropped;
      continue;
    }
    out.push_back(t);
  }
  if (dropped > 0) spdlog::warn("dropped {} unknown or unplaced {} term(s)", dropped, side);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw Error(ErrorKind::empty_terms, std::string(side) + " term set is empty after filtering");
  return out;
}

HierarchyScore MeshOntology::set_similarity(std::span<const std::string> doc_terms,
                                            std::span<const std::string> ctx_terms) const {
  auto lhs = usable_terms(doc_terms, "document");
  auto rhs = usable_terms(ctx_terms, "context");

  std::vector<double> values;
  values.reserve(lhs.size() * rhs.size());
  for (const auto& x : lhs) {
    for (const auto& y : rhs) values.push_back(lin_similarity(x, y));
  }
  // Summing in sorted order makes the result independent of which side is
  // the document.
  std::sort(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  return {sum / static_cast<double>(values.size()), values.size()};
}

// ---------------------------------------------------------------------------
// Parsing

std::vector<MeshDescriptor> parse_mesh_tsv(std::istream& in) {
  std::vector<MeshDescriptor> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() < 2 || fields.size() > 3) {
      throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": expected id<TAB>name<TAB>tree_numbers");
    }
    MeshDescriptor d;
    d.id = std::string(trim(fields[0]));
    d.name = std::string(fields[1]);
    if (d.id.empty()) throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": empty descriptor id");
    if (fields.size() == 3 && !trim(fields[2]).empty()) {
      for (auto tn : split(fields[2], ';')) {
        if (trim(tn).empty()) continue;
        try {
          d.tree_numbers.push_back(TreeNumber::parse(tn));
        } catch (const Error& e) {
          throw Error(ErrorKind::parse, "line " + std::to_string(lineno) + ": " + e.what());
        }
      }
    }
    out.push_back(std::move(d));
  }
  return out;
}

MeshOntology parse_mesh(std::istream& in, MeshFormat format) {
  auto descriptors = format == MeshFormat::tsv ? parse_mesh_tsv(in) : parse_mesh_xml(in);
  return MeshOntology(std::move(descriptors));
}

MeshOntology parse_mesh_file(const std::filesystem::path& path, MeshFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return parse_mesh(in, format);
}

void write_mesh_tsv(std::ostream& out, const MeshOntology& ontology) {
  for (const auto& d : ontology.descriptors()) {
    out << d.id << '\t' << d.name << '\t';
    for (std::size_t i = 0; i < d.tree_numbers.size(); ++i) {
      if (i) out << ';';
      out << d.tree_numbers[i].path();
    }
    out << '\n';
  }
}

AnnotationCounts parse_annotation_counts(std::istream& in) {
  AnnotationCounts counts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    auto fields = split(line, '\t');
    const auto where = "counts line " + std::to_string(lineno);
    if (fields.size() != 2) throw Error(ErrorKind::parse, where + ": expected descriptor_id<TAB>count");
    auto id = std::string(trim(fields[0]));
    auto num = std::string(trim(fields[1]));
    if (id.empty() || num.empty() || num.find_first_not_of("0123456789") != std::string::npos) {
      throw Error(ErrorKind::parse, where + ": malformed row");
    }
    counts[id] += std::stoull(num);
  }
  return counts;
}

AnnotationCounts read_annotation_counts(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  return parse_annotation_counts(in);
}

void write_annotation_counts(std::ostream& out, const AnnotationCounts& counts) {
  for (const auto& [id, count] : counts) out << id << '\t' << count << '\n';
}

}  // namespace biodistill
