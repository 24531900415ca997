"""Coverage-driven prompt augmentation with the offline mock generator.

Run with:  python3 demos/prompt_coverage.py
"""

from ptqkit import coverage as cov


def main():
    aspects = cov.AspectSet.default()
    print(f"aspect set: {len(aspects)} aspects")
    for a in list(aspects)[:4]:
        print(f"  {a.aspect_id:<18} triggers on e.g. {a.lexicon[0]!r}")
    print("  ...")

    seed = cov.PromptSet.from_texts(
        ["a single continuous alarm beep", "soft piano music playing in a large hall"],
        aspects,
    )
    covered = sum(cov.global_coverage(seed))
    print(f"\nseed set covers {covered}/{len(aspects)} aspects")

    gen = cov.MockCaptionGenerator(aspects, seed=0)
    final, report = cov.augment(seed, aspects, gen, i_max=10, tau_redundancy=0)
    print(f"after augmentation: {sum(cov.global_coverage(final))}/{len(aspects)} covered, "
          f"{len(final.prompts)} prompts, {report.generator_calls} generator calls, "
          f"redundancy={report.final_redundancy}")
    print("\ngenerated prompts:")
    for p in final.prompts:
        if p.prompt_id.startswith("gen-"):
            print(f"  {p.prompt_id}: {p.text}")


if __name__ == "__main__":
    main()
