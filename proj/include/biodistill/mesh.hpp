#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace biodistill {

// Identifier of the synthetic top element. Never a valid MeSH UI.
inline constexpr std::string_view kRootId = "<root>";

// Dot-separated position in the MeSH hierarchy, e.g. "C01.100".
class TreeNumber {
 public:
  // Throws Error(parse) on empty paths or empty segments.
  static TreeNumber parse(std::string_view path);

  const std::string& path() const { return path_; }
  char category() const { return path_.front(); }
  std::size_t depth() const;

  // Proper prefixes at segment boundaries, shortest first.
  std::vector<std::string> proper_prefixes() const;
  bool is_proper_prefix_of(const TreeNumber& other) const;

  friend bool operator==(const TreeNumber&, const TreeNumber&) = default;
  friend auto operator<=>(const TreeNumber&, const TreeNumber&) = default;

 private:
  explicit TreeNumber(std::string path) : path_(std::move(path)) {}
  std::string path_;
};

struct MeshDescriptor {
  std::string id;
  std::string name;
  std::vector<TreeNumber> tree_numbers;
};

enum class IcMode { corpus, structural };
enum class MeshFormat { mesh_xml, tsv };

const char* to_string(IcMode mode);
IcMode parse_ic_mode(std::string_view text);
MeshFormat parse_mesh_format(std::string_view text);
MeshFormat mesh_format_for(const std::filesystem::path& path);

using AnnotationCounts = std::map<std::string, std::uint64_t, std::less<>>;

struct HierarchyScore {
  double value = 0.0;
  std::size_t pair_count = 0;
};

// Immutable poly-hierarchy with precomputed closure frequencies. Queries are
// const and safe to share across threads.
//
// The descendant closure M(m) of a descriptor includes m itself. In corpus
// mode the frequency of a closure is the summed annotation count of its
// members and the total mass is the summed count of every descriptor that has
// at least one tree number; in structural mode every such descriptor counts
// once.
class MeshOntology {
 public:
  MeshOntology() : MeshOntology(std::vector<MeshDescriptor>{}) {}

  // Structural mode. Throws Error(conflict) on duplicate ids or on a tree
  // number claimed by two descriptors.
  explicit MeshOntology(std::vector<MeshDescriptor> descriptors);

  // Copy switched to corpus mode with the given counts. Counts for ids the
  // ontology does not know are ignored with a warning.
  MeshOntology with_counts(const AnnotationCounts& counts) const;

  std::size_t size() const { return descriptors_.size(); }
  bool contains(std::string_view id) const;
  const MeshDescriptor& descriptor(std::string_view id) const;
  const std::vector<MeshDescriptor>& descriptors() const { return descriptors_; }
  IcMode ic_mode() const { return mode_; }
  std::uint64_t total_mass() const { return total_mass_; }
  std::uint64_t annotation_count(std::string_view id) const;

  // Descriptor ids directly under the virtual root (one-segment tree numbers).
  std::vector<std::string> root_children() const;
  std::optional<std::string> descriptor_at(std::string_view tree_path) const;
  bool has_tree_numbers(std::string_view id) const;

  // Descriptors at proper-prefix paths of any of the descriptor's tree
  // numbers, closed transitively over descriptors, plus kRootId. Excludes the
  // descriptor itself.
  std::set<std::string> ancestors(std::string_view id) const;
  // True when `ancestor` is `id`, one of its ancestors, or the root.
  bool subsumes(std::string_view ancestor, std::string_view id) const;

  std::uint64_t closure_frequency(std::string_view id) const;
  double information_content(std::string_view id) const;
  std::string lca(std::string_view x, std::string_view y) const;
  double lin_similarity(std::string_view x, std::string_view y) const;

  // Mean pairwise Lin similarity over the Cartesian product of the two sets.
  // Unknown ids and descriptors without tree numbers are dropped with a
  // warning; duplicates collapse.
  HierarchyScore set_similarity(std::span<const std::string> doc_terms,
                                std::span<const std::string> ctx_terms) const;

 private:
  static constexpr int kRoot = -1;

  int index_of(std::string_view id) const;  // kRoot for the root
  int require(std::string_view id) const;
  double ic_at(int index) const;
  const std::string& id_at(int index) const;
  void rebuild_frequencies();
  std::vector<std::string> usable_terms(std::span<const std::string> terms, const char* side) const;

  std::vector<MeshDescriptor> descriptors_;
  std::unordered_map<std::string, int> by_id_;
  std::unordered_map<std::string, int> by_tree_;
  // Sorted proper ancestors per descriptor, root excluded.
  std::vector<std::vector<int>> ancestors_;
  std::vector<std::uint64_t> counts_;
  std::vector<std::uint64_t> closure_freq_;
  std::uint64_t total_mass_ = 0;
  IcMode mode_ = IcMode::structural;
};

// Parses DescriptorRecordSet XML or the interchange TSV
// `id<TAB>name<TAB>tree1;tree2`. Malformed input throws Error(parse) with a
// line or record locator.
MeshOntology parse_mesh(std::istream& in, MeshFormat format);
MeshOntology parse_mesh_file(const std::filesystem::path& path, MeshFormat format);

std::vector<MeshDescriptor> parse_mesh_tsv(std::istream& in);
std::vector<MeshDescriptor> parse_mesh_xml(std::istream& in);

void write_mesh_tsv(std::ostream& out, const MeshOntology& ontology);

// `descriptor_id<TAB>count` rows.
AnnotationCounts parse_annotation_counts(std::istream& in);
AnnotationCounts read_annotation_counts(const std::filesystem::path& path);
void write_annotation_counts(std::ostream& out, const AnnotationCounts& counts);

}  // namespace biodistill
