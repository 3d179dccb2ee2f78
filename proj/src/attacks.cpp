namespace sca {
namespace {
[[maybe_unused]] int placeholder_attacks = 0;
}
} // namespace sca
