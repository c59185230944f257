"""Class-balancing arithmetic for the clinical dataset's patch counts.

Ischaemia: 235 present patches get 3 magnifications x 7 variants = 4935;
the 1431 absent patches keep their 3 plain crops (4293) and draw 642
transformed crops. Infection balances both classes to 982 x 3 = 2946.
"""

from collections import Counter

from spcdkit.augmentation import plan_balance

N_FACTORS = 3
N_VARIANTS = 7   # plain crop plus six transforms


def describe(name, counts, target=None):
    plans = plan_balance(counts, N_FACTORS, N_VARIANTS, target=target)
    print(name)
    for cls, plan in plans.items():
        variants = Counter(v for sel in plan.selections for _, v in sel)
        plain = variants.pop(0, 0)
        print(f"  {cls:<8} patches {plan.n_records:>5}  augmented {plan.total:>5}"
              f"  (plain {plain}, transformed {sum(variants.values())})")


if __name__ == "__main__":
    describe("ischaemia", {"absent": 1431, "present": 235})
    describe("infection", {"none": 684, "present": 982}, target=982 * N_FACTORS)
